#include "rlconn/neural_paths.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

#include "rlconn/errors.hpp"
#include "rlconn/random.hpp"
#include "rlconn/tabular_paths.hpp"

namespace rlconn {

namespace {

constexpr double kPinvTol = 1e-10;

bool full_column_rank(const Matrix& W) { return numerical_rank(W, kPinvTol) == W.cols(); }

template <class M>
M lerp(const M& a, const M& b, double t) {
  return (1.0 - t) * a + t * b;
}

/// Output of the hidden layers [0, count) on X.
Matrix hidden_output(const Theta& theta, int count, const Matrix& X, double beta) {
  Matrix F = X;
  for (int k = 0; k < count; ++k) {
    const Layer& l = theta.layers[static_cast<std::size_t>(k)];
    Matrix pre = F * l.W;
    pre.rowwise() += l.b.transpose();
    F = leaky_relu(pre, beta);
  }
  return F;
}

std::span<const Layer> layers_above(const Theta& theta, int varying) {
  return std::span<const Layer>(theta.layers).subspan(static_cast<std::size_t>(varying) + 1);
}

Matrix random_gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix M(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) M(i, j) = n(rng);
  return M;
}

}  // namespace

// ---------------------------------------------------------------------------
// Layer inversion

Layer h_map(const Matrix& M, std::span<const Layer> above, const Matrix& pi, double beta) {
  if (!(pi.array() > 0.0).all()) throw NonPositivePolicy("target policy must be strictly positive");
  Matrix target = softmax_inv_rows(pi);
  for (std::size_t k = above.size(); k-- > 0;) {
    const Layer& l = above[k];
    if (!full_column_rank(l.W))
      throw RankDeficient("weight of layer +" + std::to_string(k + 1) +
                          " above the inverted one lacks full column rank");
    Matrix shifted = target;
    shifted.rowwise() -= l.b.transpose();
    target = leaky_relu_inv(shifted * pinv(l.W, kPinvTol), beta);
  }
  const Matrix Ma = with_ones_column(M);
  if (numerical_rank(Ma, kPinvTol) != Ma.rows())
    throw RankDeficient("[input, 1] lacks full row rank");
  const Matrix Wb = pinv(Ma, kPinvTol) * target;
  return {Wb.topRows(M.cols()), Wb.row(M.cols()).transpose()};
}

Policy smooth_policy(const Policy& pi, double eps) {
  const double A = static_cast<double>(pi.n_actions());
  if (!(eps >= 0.0 && eps * A <= 1.0)) throw InvalidInput("smoothing floor out of range");
  Matrix t = (1.0 - A * eps) * pi.table().array() + eps;
  for (Eigen::Index s = 0; s < t.rows(); ++s) t.row(s) /= t.row(s).sum();
  return Policy(std::move(t));
}

Theta realize_policy(const NetArchitecture& arch, const Matrix& X, std::span<const Layer> rest,
                     const Policy& pi, double floor) {
  arch.validate();
  if (pi.table().minCoeff() < floor)
    throw PolicyFloorViolated("policy entry " + std::to_string(pi.table().minCoeff()) +
                              " below the floor " + std::to_string(floor));
  Theta theta;
  theta.layers.push_back(h_map(X, rest, pi.table(), arch.beta));
  theta.layers.insert(theta.layers.end(), rest.begin(), rest.end());
  theta.check_shapes(arch);
  const double err = (forward(arch, theta, X).policy.table() - pi.table()).cwiseAbs().maxCoeff();
  if (err > 1e-8) throw OutputDrift("realized policy off by " + std::to_string(err));
  return theta;
}

// ---------------------------------------------------------------------------
// Segments

std::string_view to_string(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::WeightFullrankRepair: return "weight-fullrank-repair";
    case SegmentKind::RankRestoreFirstLayer: return "rank-restore-F1";
    case SegmentKind::FirstLayerSwap: return "first-layer-swap";
    case SegmentKind::PreimageChain: return "preimage-chain";
    case SegmentKind::WeightSwapWithH: return "weight-swap-with-h";
    case SegmentKind::TabularLift: return "tabular-lift";
  }
  return "unknown";
}

PathSegment::PathSegment(SegmentKind kind, SegmentInvariant invariant, Theta start, Theta end,
                         std::function<Theta(double)> curve)
    : kind_(kind),
      invariant_(invariant),
      start_(std::make_shared<const Theta>(std::move(start))),
      end_(std::make_shared<const Theta>(std::move(end))),
      curve_(std::move(curve)) {}

PathSegment PathSegment::constant(SegmentKind kind, const Theta& theta) {
  return PathSegment(kind, SegmentInvariant::OutputConstant, theta, theta, {});
}

Theta PathSegment::at(double alpha) const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidInput("segment parameter must lie in [0, 1]");
  if (alpha == 0.0 || !curve_) return *start_;
  if (alpha == 1.0) return *end_;
  return curve_(alpha);
}

PathSegment PathSegment::reversed() const {
  std::function<Theta(double)> back;
  if (curve_) back = [f = curve_](double a) { return f(1.0 - a); };
  PathSegment out(kind_, invariant_, Theta{}, Theta{}, std::move(back));
  out.start_ = end_;
  out.end_ = start_;
  return out;
}

double max_output_drift(const NetArchitecture& arch, const Matrix& X, const PathSegment& seg,
                        const std::vector<double>& grid) {
  const Matrix ref = forward(arch, seg.start(), X).policy.table();
  double drift = 0.0;
  for (double a : grid)
    drift = std::max(drift, (forward(arch, seg.at(a), X).policy.table() - ref).cwiseAbs().maxCoeff());
  return drift;
}

// ---------------------------------------------------------------------------
// Preimage chain

namespace {

struct ChainData {
  int varying = 0;
  int depth = 0;
  double beta = 0.0;
  Theta a;
  Matrix input_pinv;                 // [M, 1]^+
  Matrix kernel_a, kernel_b;         // parts of [W; b^T] in ker [M, 1]
  Matrix top_a, top_b;               // input of the softmax layer, or logits when it varies
  std::vector<Matrix> weight_pinv;   // indexed by layer
  std::vector<Matrix> null_a, null_b;  // parts of each layer input in ker W^T

  Theta eval(double t) const {
    Matrix target;
    if (varying == depth - 1) {
      target = lerp(top_a, top_b, t);
    } else {
      Matrix F = lerp(top_a, top_b, t);
      for (int j = depth - 2; j > varying; --j) {
        const Layer& l = a.layers[static_cast<std::size_t>(j)];
        Matrix pre = leaky_relu_inv(F, beta);
        pre.rowwise() -= l.b.transpose();
        F = pre * weight_pinv[static_cast<std::size_t>(j)] +
            lerp(null_a[static_cast<std::size_t>(j)], null_b[static_cast<std::size_t>(j)], t);
      }
      target = leaky_relu_inv(F, beta);
    }
    const Matrix Wb = input_pinv * target + lerp(kernel_a, kernel_b, t);
    Theta out = a;
    Layer& v = out.layers[static_cast<std::size_t>(varying)];
    v.W = Wb.topRows(Wb.rows() - 1);
    v.b = Wb.row(Wb.rows() - 1).transpose();
    return out;
  }
};

}  // namespace

PathSegment preimage_chain_path(const NetArchitecture& arch, const Matrix& X, int varying,
                                const Theta& theta_a, const Theta& theta_b,
                                const std::vector<double>& grid, double tol) {
  arch.validate();
  theta_a.check_shapes(arch);
  theta_b.check_shapes(arch);
  const int depth = arch.depth();
  if (varying < 0 || varying >= depth) throw InvalidInput("varying layer out of range");
  for (int k = 0; k < depth; ++k)
    if (k != varying && !(theta_a.layers[static_cast<std::size_t>(k)] == theta_b.layers[static_cast<std::size_t>(k)]))
      throw InvalidInput("endpoints differ outside the varying layer");
  if (theta_a == theta_b) return PathSegment::constant(SegmentKind::PreimageChain, theta_a);

  const double beta = arch.beta;
  const Matrix M = hidden_output(theta_a, varying, X, beta);
  const auto pass_a = forward_layers(M, std::span<const Layer>(theta_a.layers).subspan(static_cast<std::size_t>(varying)), beta);
  const auto pass_b = forward_layers(M, std::span<const Layer>(theta_b.layers).subspan(static_cast<std::size_t>(varying)), beta);
  const double mismatch = (pass_a.post.back() - pass_b.post.back()).cwiseAbs().maxCoeff();
  if (mismatch > 1e-8) throw InvalidInput("endpoints do not share the same output policy");

  auto data = std::make_shared<ChainData>();
  data->varying = varying;
  data->depth = depth;
  data->beta = beta;
  data->a = theta_a;
  const Matrix Ma = with_ones_column(M);
  if (numerical_rank(Ma, kPinvTol) != Ma.rows()) throw RankDeficient("[input, 1] lacks full row rank");
  data->input_pinv = pinv(Ma, kPinvTol);
  const Matrix kernel_proj = Matrix::Identity(Ma.cols(), Ma.cols()) - data->input_pinv * Ma;
  auto stacked = [&](const Theta& t) {
    const Layer& l = t.layers[static_cast<std::size_t>(varying)];
    Matrix Wb(l.W.rows() + 1, l.W.cols());
    Wb.topRows(l.W.rows()) = l.W;
    Wb.row(l.W.rows()) = l.b.transpose();
    return Wb;
  };
  data->kernel_a = kernel_proj * stacked(theta_a);
  data->kernel_b = kernel_proj * stacked(theta_b);

  // pass_x.post[i] is the output of layer varying + i.
  const auto rel = [varying](int layer) { return static_cast<std::size_t>(layer - varying); };
  if (varying == depth - 1) {
    data->top_a = pass_a.pre.back();
    data->top_b = pass_b.pre.back();
  } else {
    data->top_a = pass_a.post[rel(depth - 2)];
    data->top_b = pass_b.post[rel(depth - 2)];
  }
  data->weight_pinv.resize(static_cast<std::size_t>(depth));
  data->null_a.resize(static_cast<std::size_t>(depth));
  data->null_b.resize(static_cast<std::size_t>(depth));
  for (int j = varying + 1; j < depth; ++j) {
    const Matrix& W = theta_a.layers[static_cast<std::size_t>(j)].W;
    if (!full_column_rank(W))
      throw RankDeficient("weight of layer " + std::to_string(j + 1) + " lacks full column rank");
    const Matrix Wp = pinv(W, kPinvTol);
    const Matrix proj = Matrix::Identity(W.rows(), W.rows()) - W * Wp;
    data->weight_pinv[static_cast<std::size_t>(j)] = Wp;
    data->null_a[static_cast<std::size_t>(j)] = pass_a.post[rel(j - 1)] * proj;
    data->null_b[static_cast<std::size_t>(j)] = pass_b.post[rel(j - 1)] * proj;
  }

  PathSegment seg(SegmentKind::PreimageChain, SegmentInvariant::OutputConstant, theta_a, theta_b,
                  [data](double t) { return data->eval(t); });
  const double drift = max_output_drift(arch, X, seg, grid);
  if (drift > tol) throw OutputDrift("preimage chain drifts by " + std::to_string(drift));
  return seg;
}

// ---------------------------------------------------------------------------
// Weight repair

PathSegment weight_fullrank_repair(const NetArchitecture& arch, const Matrix& X, const Theta& theta,
                                   std::uint64_t seed, int first_layer) {
  arch.validate();
  theta.check_shapes(arch);
  const int depth = arch.depth();
  if (first_layer < 1) throw InvalidInput("first repaired layer must be at least 1");
  std::mt19937_64 rng(seed);
  Theta end = theta;
  bool changed = false;
  Matrix F = hidden_output(theta, first_layer - 1, X, arch.beta);
  for (int k = first_layer - 1; k < depth; ++k) {
    const Layer& l = theta.layers[static_cast<std::size_t>(k)];
    if (!full_column_rank(l.W)) {
      const Matrix N = null_space(F, kPinvTol);
      if (N.cols() == 0)
        throw RepairUnavailable("layer " + std::to_string(k + 1) +
                                " is rank deficient and its input has a trivial kernel");
      const double scale = std::max(1.0, l.W.norm() / std::sqrt(static_cast<double>(l.W.size())));
      bool repaired = false;
      for (int attempt = 0; attempt < 20 && !repaired; ++attempt) {
        const Matrix W = l.W + N * random_gaussian(rng, N.cols(), l.W.cols(), scale);
        if (full_column_rank(W)) {
          end.layers[static_cast<std::size_t>(k)].W = W;
          repaired = true;
        }
      }
      if (!repaired)
        throw RepairUnavailable("kernel of the input to layer " + std::to_string(k + 1) +
                                " is too small to restore full column rank");
      changed = true;
    }
    if (k + 1 < depth) {
      Matrix pre = F * l.W;
      pre.rowwise() += l.b.transpose();
      F = leaky_relu(pre, arch.beta);
    }
  }
  if (!changed) return PathSegment::constant(SegmentKind::WeightFullrankRepair, theta);
  return PathSegment(SegmentKind::WeightFullrankRepair, SegmentInvariant::OutputConstant, theta, end,
                     [theta, end](double t) {
                       Theta out = theta;
                       for (std::size_t k = 0; k < out.layers.size(); ++k)
                         out.layers[k].W = lerp(theta.layers[k].W, end.layers[k].W, t);
                       return out;
                     });
}

// ---------------------------------------------------------------------------
// First-layer moves

Matrix block_activation(const Matrix& X, const Matrix& W, const Vector& b, double beta) {
  Matrix pre = X * W;
  pre.rowwise() += b.transpose();
  return leaky_relu(pre, beta);
}

Matrix block_product(const Matrix& X, const FirstLayerBlock& block, double beta) {
  return block_activation(X, block.W, block.b, beta) * block.V;
}

BlockPath::BlockPath(std::vector<FirstLayerBlock> keyframes) : keyframes_(std::move(keyframes)) {
  if (keyframes_.empty()) throw InvalidInput("a block path needs at least one keyframe");
}

FirstLayerBlock BlockPath::at(double alpha) const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidInput("path parameter must lie in [0, 1]");
  const std::size_t pieces = keyframes_.size() - 1;
  if (pieces == 0 || alpha == 0.0) return keyframes_.front();
  if (alpha == 1.0) return keyframes_.back();
  const double x = alpha * static_cast<double>(pieces);
  const std::size_t i = std::min(pieces - 1, static_cast<std::size_t>(x));
  const double t = x - static_cast<double>(i);
  if (t == 0.0) return keyframes_[i];
  const auto& p = keyframes_[i];
  const auto& q = keyframes_[i + 1];
  return {lerp(p.W, q.W, t), lerp(p.b, q.b, t), lerp(p.V, q.V, t)};
}

BlockPath rank_restore_first_layer(const Matrix& X, const FirstLayerBlock& start, double beta,
                                   std::uint64_t seed, int max_tries) {
  const auto S = X.rows();
  const auto width = start.W.cols();
  if (start.W.rows() != X.cols() || start.b.size() != width || start.V.rows() != width)
    throw ShapeMismatch("first-layer block shapes do not agree");
  constexpr double kRankTol = 1e-6;
  std::vector<FirstLayerBlock> frames{start};
  Matrix A = block_activation(X, start.W, start.b, beta);
  int rank = numerical_rank(A, kRankTol);
  if (rank == S) return BlockPath(std::move(frames));
  if (width <= S) throw InvalidInput("first layer must be wider than the number of states");

  std::mt19937_64 rng(seed);
  const double w_scale = std::max(1e-3, start.W.norm() / std::sqrt(static_cast<double>(start.W.size())));
  int rounds = 0;
  while (rank < S) {
    if (++rounds > width) throw RestorationStalled("rank did not reach |S| within the round cap");
    FirstLayerBlock cur = frames.back();
    // An exact column dependency: any vector in ker(A), which is nontrivial since A is wide.
    Eigen::JacobiSVD<Matrix> dec(A, Eigen::ComputeFullV);
    const Vector z = dec.matrixV().col(width - 1);
    Eigen::Index j = 0;
    z.cwiseAbs().maxCoeff(&j);
    // a_j = sum_{i != j} c_i a_i with c_i = -z_i / z_j; move v_j's weight onto the others.
    FirstLayerBlock moved = cur;
    for (Eigen::Index i = 0; i < width; ++i)
      if (i != j) moved.V.row(i) += (-z(i) / z(j)) * cur.V.row(j);
    moved.V.row(j).setZero();
    frames.push_back(moved);

    bool accepted = false;
    for (int attempt = 0; attempt < max_tries && !accepted; ++attempt) {
      FirstLayerBlock rewired = moved;
      rewired.W.col(j) = random_gaussian(rng, X.cols(), 1, w_scale);
      rewired.b(j) = random_gaussian(rng, 1, 1, w_scale)(0, 0);
      const Matrix A2 = block_activation(X, rewired.W, rewired.b, beta);
      const int r2 = numerical_rank(A2, kRankTol);
      if (r2 > rank) {
        frames.push_back(rewired);
        A = A2;
        rank = r2;
        accepted = true;
      }
    }
    if (!accepted)
      throw RestorationStalled("no rewiring direction increased the rank in " +
                               std::to_string(max_tries) + " tries");
  }
  return BlockPath(std::move(frames));
}

namespace {

Matrix select_columns(const Matrix& A, const std::vector<int>& idx) {
  Matrix out(A.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
  return out;
}

std::vector<int> pivot_columns(const Matrix& A, const std::vector<int>& candidates, Eigen::Index count) {
  const Matrix sub = select_columns(A, candidates);
  Eigen::ColPivHouseholderQR<Matrix> qr(sub);
  std::vector<int> out;
  for (Eigen::Index k = 0; k < std::min<Eigen::Index>(count, sub.cols()); ++k)
    out.push_back(candidates[static_cast<std::size_t>(qr.colsPermutation().indices()(k))]);
  return out;
}

}  // namespace

BlockPath first_layer_swap(const Matrix& X, const FirstLayerBlock& start, const Matrix& W_target,
                           const Vector& b_target, double beta, std::uint64_t seed) {
  const auto S = X.rows();
  const auto width = start.W.cols();
  if (W_target.rows() != start.W.rows() || W_target.cols() != width || b_target.size() != width)
    throw ShapeMismatch("swap target does not match the first layer");
  if (start.W == W_target && start.b == b_target) return BlockPath({start});
  const Matrix A = block_activation(X, start.W, start.b, beta);
  const Matrix At = block_activation(X, W_target, b_target, beta);
  if (numerical_rank(A, kPinvTol) != S) throw RankDeficient("source activation lacks rank |S|");
  if (numerical_rank(At, kPinvTol) != S) throw RankDeficient("target activation lacks rank |S|");

  auto admissible = [&](const std::vector<int>& I1, const std::vector<int>& I2) {
    return numerical_rank(select_columns(A, I1), 1e-8) == S &&
           numerical_rank(select_columns(At, I2), 1e-8) == S;
  };
  std::vector<int> all(static_cast<std::size_t>(width));
  std::iota(all.begin(), all.end(), 0);
  const auto half = static_cast<std::size_t>((width + 1) / 2);
  std::vector<int> I1, I2;
  bool found = false;
  if (width >= 2 * S) {
    // Pivoted QR picks well-conditioned columns for each block.
    std::vector<int> pa = pivot_columns(A, all, S);
    std::vector<int> rest;
    for (int c : all)
      if (std::find(pa.begin(), pa.end(), c) == pa.end()) rest.push_back(c);
    std::vector<int> pb = pivot_columns(At, rest, S);
    I1 = pa;
    I2 = pb;
    for (int c : rest)
      if (std::find(pb.begin(), pb.end(), c) == pb.end()) (I1.size() < half ? I1 : I2).push_back(c);
    found = admissible(I1, I2);
  }
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 50 && !found; ++attempt) {
    std::vector<int> perm = all;
    std::shuffle(perm.begin(), perm.end(), rng);
    I1.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(half));
    I2.assign(perm.begin() + static_cast<std::ptrdiff_t>(half), perm.end());
    found = admissible(I1, I2);
  }
  if (!found) throw SwapFailed("no neuron split with full-rank activation blocks");
  std::sort(I1.begin(), I1.end());
  std::sort(I2.begin(), I2.end());

  const Matrix Z = A * start.V;
  std::vector<FirstLayerBlock> frames{start};
  // Product carried by block I1 alone.
  FirstLayerBlock k1 = start;
  k1.V.setZero();
  {
    const Matrix V1 = pinv(select_columns(A, I1), kPinvTol) * Z;
    for (std::size_t k = 0; k < I1.size(); ++k) k1.V.row(I1[k]) = V1.row(static_cast<Eigen::Index>(k));
  }
  frames.push_back(k1);
  // Block I2 is idle: move its weights to the target.
  FirstLayerBlock k2 = k1;
  for (int c : I2) {
    k2.W.col(c) = W_target.col(c);
    k2.b(c) = b_target(c);
  }
  frames.push_back(k2);
  // Product carried by the rewired block I2.
  FirstLayerBlock k3 = k2;
  k3.V.setZero();
  {
    const Matrix V3 = pinv(select_columns(At, I2), kPinvTol) * Z;
    for (std::size_t k = 0; k < I2.size(); ++k) k3.V.row(I2[k]) = V3.row(static_cast<Eigen::Index>(k));
  }
  frames.push_back(k3);
  // Block I1 is idle now.
  FirstLayerBlock k4 = k3;
  k4.W = W_target;
  k4.b = b_target;
  frames.push_back(k4);
  // Spread the product over every neuron again.
  FirstLayerBlock k5 = k4;
  k5.V = pinv(At, kPinvTol) * Z;
  frames.push_back(k5);
  return BlockPath(std::move(frames));
}

// ---------------------------------------------------------------------------
// Tall full-rank matrices

namespace {

struct PolarParts {
  Matrix Q;
  Matrix P;
};

PolarParts polar(const Matrix& F) {
  const Svd d = svd(F);
  return {d.U * d.V.transpose(), d.V * d.singular.asDiagonal() * d.V.transpose()};
}

/// [Q, complement] as an m x m orthogonal matrix.
Matrix complete_basis(const Matrix& Q) {
  const Matrix H = Q.householderQr().householderQ();
  Matrix B(Q.rows(), Q.rows());
  B.leftCols(Q.cols()) = Q;
  B.rightCols(Q.rows() - Q.cols()) = H.rightCols(Q.rows() - Q.cols());
  return B;
}

}  // namespace

MatrixPath::MatrixPath(Matrix start, Matrix end, Matrix basis, Matrix coords, std::vector<Plane> planes,
                       Matrix spd_start, Matrix spd_end)
    : start_(std::move(start)),
      end_(std::move(end)),
      basis_(std::move(basis)),
      coords_(std::move(coords)),
      planes_(std::move(planes)),
      spd_start_(std::move(spd_start)),
      spd_end_(std::move(spd_end)) {
  fix_start_ = start_ - raw(0.0);
  fix_end_ = end_ - raw(1.0);
}

Matrix MatrixPath::raw(double t) const {
  Matrix C = coords_;
  for (const Plane& p : planes_) {
    const double c = std::cos(t * p.angle), s = std::sin(t * p.angle);
    const Eigen::RowVectorXd ri = C.row(p.i), rj = C.row(p.j);
    C.row(p.i) = c * ri - s * rj;
    C.row(p.j) = s * ri + c * rj;
  }
  return basis_ * C * lerp(spd_start_, spd_end_, t);
}

Matrix MatrixPath::at(double t) const {
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidInput("path parameter must lie in [0, 1]");
  if (t == 0.0 || start_ == end_) return start_;
  if (t == 1.0) return end_;
  return raw(t) + (1.0 - t) * fix_start_ + t * fix_end_;
}

MatrixPath fullrank_tall_path(const Matrix& F_a, const Matrix& F_b, const std::vector<double>& grid,
                              double min_singular) {
  if (F_a.rows() != F_b.rows() || F_a.cols() != F_b.cols()) throw ShapeMismatch("endpoint shapes differ");
  const auto m = F_a.rows(), n = F_a.cols();
  if (m <= n) throw InvalidInput("matrices must have more rows than columns");
  if (min_singular_value(F_a) < min_singular || min_singular_value(F_b) < min_singular)
    throw RankDeficient("endpoint lacks full column rank");
  const PolarParts a = polar(F_a);
  const PolarParts b = polar(F_b);

  // G = B_b B_a^T maps frame a onto frame b. The spare column (m > n) lets
  // us fix det G = +1, so G lies on a rotation path from the identity.
  const Matrix B_a = complete_basis(a.Q);
  Matrix B_b = complete_basis(b.Q);
  if (B_a.determinant() * B_b.determinant() < 0.0) B_b.col(m - 1) *= -1.0;
  const Matrix G = B_b * B_a.transpose();

  // Real Schur form of an orthogonal matrix: 2x2 rotation blocks and +-1
  // diagonal entries; the -1 entries come in pairs and turn by pi together.
  Eigen::RealSchur<Matrix> schur(G);
  const Matrix& T = schur.matrixT();
  std::vector<MatrixPath::Plane> planes;
  std::vector<Eigen::Index> flips;
  for (Eigen::Index k = 0; k < m; ++k) {
    if (k + 1 < m && T(k + 1, k) != 0.0) {
      const double s = 0.5 * (T(k + 1, k) - T(k, k + 1));
      const double c = 0.5 * (T(k, k) + T(k + 1, k + 1));
      planes.push_back({k, k + 1, std::atan2(s, c)});
      ++k;
    } else if (T(k, k) < 0.0) {
      flips.push_back(k);
    }
  }
  if (flips.size() % 2 != 0) throw PathStalled("rotation between the frames has determinant -1");
  for (std::size_t k = 0; k < flips.size(); k += 2) planes.push_back({flips[k], flips[k + 1], std::numbers::pi});

  const Matrix Z = schur.matrixU();
  MatrixPath path(F_a, F_b, Z, Z.transpose() * a.Q, std::move(planes), a.P, b.P);
  for (double t : grid)
    if (min_singular_value(path.at(t)) < min_singular)
      throw PathStalled("sample at t=" + std::to_string(t) + " lost rank");
  return path;
}

// ---------------------------------------------------------------------------
// Assembly

SegmentedPath::SegmentedPath(std::vector<PathSegment> segments) : segments_(std::move(segments)) {
  if (segments_.empty()) throw InvalidInput("a segmented path needs at least one segment");
}

Theta SegmentedPath::at(double alpha) const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidInput("path parameter must lie in [0, 1]");
  const auto n = segments_.size();
  if (alpha == 1.0) return segments_.back().end();
  const double x = alpha * static_cast<double>(n);
  const std::size_t i = std::min(n - 1, static_cast<std::size_t>(x));
  return segments_[i].at(std::clamp(x - static_cast<double>(i), 0.0, 1.0));
}

namespace {

struct RouteEntry {
  PathSegment segment;
  std::string side;
  std::function<Matrix(double)> prescribed;  // tabular lift only
};

template <class F>
auto guarded(SegmentKind kind, const std::string& side, F&& build) {
  try {
    return build();
  } catch (const SegmentFailure&) {
    throw;
  } catch (const Error& e) {
    throw SegmentFailure(std::string(to_string(kind)), side, e.what());
  }
}

PathSegment block_segment(SegmentKind kind, const Theta& theta, const BlockPath& path) {
  const auto& frames = path.keyframes();
  if (frames.size() == 1) return PathSegment::constant(kind, theta);
  auto with_block = [theta](const FirstLayerBlock& blk) {
    Theta out = theta;
    out.layers[0].W = blk.W;
    out.layers[0].b = blk.b;
    out.layers[1].W = blk.V;
    return out;
  };
  return PathSegment(kind, SegmentInvariant::OutputConstant, with_block(frames.front()),
                     with_block(frames.back()),
                     [with_block, path](double t) { return with_block(path.at(t)); });
}

/// Shared machinery for both routes: `varying` is the inverted layer and all
/// layers below it are common to every point on the bridge.
struct Bridge {
  const NetArchitecture* arch;
  int varying;
  Matrix input;  // input of the varying layer
  std::vector<Layer> prefix;

  Theta with_h(std::span<const Layer> rest, const Matrix& pi) const {
    Theta t;
    t.layers = prefix;
    t.layers.push_back(h_map(input, rest, pi, arch->beta));
    t.layers.insert(t.layers.end(), rest.begin(), rest.end());
    return t;
  }
};

std::vector<Layer> rest_of(const Theta& t, int varying) {
  auto s = layers_above(t, varying);
  return {s.begin(), s.end()};
}

NnPathResult certify(const Mdp& mdp, const NetArchitecture& arch, const Matrix& X,
                     std::vector<RouteEntry> route, const std::vector<RewardTable>& rewards,
                     const NnPathOptions& options) {
  validate_grid(options.grid);
  const std::size_t n = route.size();
  std::vector<PathSegment> segs;
  for (const auto& r : route) segs.push_back(r.segment);
  NnPathResult result{SegmentedPath(segs), {}, {}, {}, {}, true, {}};
  auto fail = [&](const std::string& why) {
    if (result.certified) result.failure = why;
    result.certified = false;
  };

  const Theta& theta_1 = segs.front().start();
  const Theta& theta_2 = segs.back().end();
  const auto out_1 = forward(arch, theta_1, X);
  const auto out_2 = forward(arch, theta_2, X);
  const Matrix occ_1 = occupancy(mdp, out_1.policy).table;
  const Matrix occ_2 = occupancy(mdp, out_2.policy).table;
  for (const auto& r : rewards)
    result.bounds.push_back(std::min(occ_1.cwiseProduct(r).sum(), occ_2.cwiseProduct(r).sum()));
  const double occ_threshold = options.refine_fraction * (occ_1 - occ_2).cwiseAbs().sum() + 1e-12;

  struct Sample {
    Theta theta;
    Matrix policy;
    Matrix occupancy;
  };
  auto evaluate = [&](const PathSegment& seg, double a) {
    Theta th = seg.at(a);
    Policy pi = forward(arch, th, X).policy;
    Matrix occ = occupancy(mdp, pi).table;
    return Sample{std::move(th), pi.table(), std::move(occ)};
  };

  result.trace.values.assign(rewards.size(), {});
  std::vector<double> drift_curve, lift_curve, deficit_curve, step_curve;
  for (std::size_t i = 0; i < n; ++i) {
    const RouteEntry& entry = route[i];
    const PathSegment& seg = entry.segment;
    SegmentReport rep{seg.kind(), entry.side, seg.invariant()};
    if (i > 0 && !(seg.start() == segs[i - 1].end()))
      fail("joint mismatch before segment " + std::string(to_string(seg.kind())));

    std::map<double, Sample> samples;
    for (double a : options.grid) samples.emplace(a, evaluate(seg, a));
    double length = 0.0;
    for (auto it = samples.begin(); std::next(it) != samples.end(); ++it)
      length += it->second.theta.distance(std::next(it)->second.theta);
    const double step_threshold = options.refine_fraction * length + 1e-15;
    std::function<void(double, double, int)> refine = [&](double lo, double hi, int depth) {
      if (depth >= options.max_refine_depth) return;
      const Sample& l = samples.at(lo);
      const Sample& h = samples.at(hi);
      const bool occ_jump = (h.occupancy - l.occupancy).cwiseAbs().sum() > occ_threshold;
      const bool param_jump = h.theta.distance(l.theta) > step_threshold;
      if (!occ_jump && !param_jump) return;
      const double mid = 0.5 * (lo + hi);
      if (!(mid > lo && mid < hi)) return;
      samples.emplace(mid, evaluate(seg, mid));
      refine(lo, mid, depth + 1);
      refine(mid, hi, depth + 1);
    };
    if (!seg.is_constant())
      for (std::size_t g = 0; g + 1 < options.grid.size(); ++g) refine(options.grid[g], options.grid[g + 1], 0);

    const Matrix& ref = samples.begin()->second.policy;
    const Theta* prev = nullptr;
    for (auto& [a, s] : samples) {
      const double step = prev ? s.theta.distance(*prev) : 0.0;
      prev = &s.theta;
      rep.max_param_step = std::max(rep.max_param_step, step);
      double drift = 0.0, lift = 0.0;
      if (seg.invariant() == SegmentInvariant::OutputConstant) {
        drift = (s.policy - ref).cwiseAbs().maxCoeff();
      } else if (entry.prescribed) {
        lift = (s.policy - entry.prescribed(a)).cwiseAbs().maxCoeff();
      }
      rep.max_output_drift = std::max(rep.max_output_drift, drift);
      rep.max_lift_error = std::max(rep.max_lift_error, lift);
      ++rep.samples;
      // Joint samples are recorded once, by the earlier segment.
      if (i > 0 && a == 0.0) continue;
      const double global = (static_cast<double>(i) + a) / static_cast<double>(n);
      double deficit = 0.0;
      for (std::size_t k = 0; k < rewards.size(); ++k) {
        const double v = s.occupancy.cwiseProduct(rewards[k]).sum();
        result.trace.values[k].push_back(v);
        deficit = std::max(deficit, result.bounds[k] - v);
        if (v < result.bounds[k] - options.value_tol)
          fail("value bound for reward " + std::to_string(k) + " fails at alpha " + format_double(global) +
               " in segment " + std::string(to_string(seg.kind())));
      }
      result.trace.alphas.push_back(global);
      result.trace.points.push_back(s.theta);
      result.sample_segment.push_back(i);
      drift_curve.push_back(drift);
      lift_curve.push_back(lift);
      deficit_curve.push_back(deficit);
      step_curve.push_back(step);
    }
    if (rep.max_output_drift > options.drift_tol)
      fail("output drift " + format_double(rep.max_output_drift) + " in segment " +
           std::string(to_string(seg.kind())) + " (" + entry.side + ")");
    if (rep.max_lift_error > options.drift_tol)
      fail("tabular lift realization error " + format_double(rep.max_lift_error));
    result.segments.push_back(rep);
  }
  result.trace.residuals.emplace_back("output_drift", std::move(drift_curve));
  result.trace.residuals.emplace_back("lift_error", std::move(lift_curve));
  result.trace.residuals.emplace_back("value_deficit", std::move(deficit_curve));
  result.trace.residuals.emplace_back("param_step", std::move(step_curve));
  return result;
}

/// Segments from a side's bridge point to the shared rest layers: preimage
/// chain to the h-point, weight swap, tabular lift, preimage chain back.
std::vector<RouteEntry> bridge_route(const Mdp& mdp, const NetArchitecture& arch, const Matrix& X,
                                     const Bridge& bridge, const Theta& near_1, const Theta& near_2,
                                     const Policy& pi_1, const Policy& pi_2,
                                     const NnPathOptions& options) {
  const int v = bridge.varying;
  const auto rest_1 = rest_of(near_1, v);
  const auto rest_2 = rest_of(near_2, v);
  std::vector<RouteEntry> route;

  const Theta h_1 = guarded(SegmentKind::PreimageChain, "start", [&] { return bridge.with_h(rest_1, pi_1.table()); });
  route.push_back({guarded(SegmentKind::PreimageChain, "start",
                           [&] { return preimage_chain_path(arch, X, v, near_1, h_1, options.grid); }),
                   "start", {}});

  // Rest layers move along rank-preserving curves; the inverted layer follows through h.
  const Theta q_end = guarded(SegmentKind::WeightSwapWithH, "bridge", [&] { return bridge.with_h(rest_2, pi_1.table()); });
  if (h_1 == q_end) {
    route.push_back({PathSegment::constant(SegmentKind::WeightSwapWithH, h_1), "bridge", {}});
  } else {
    auto weight_paths = guarded(SegmentKind::WeightSwapWithH, "bridge", [&] {
      std::vector<MatrixPath> out;
      for (std::size_t k = 0; k < rest_1.size(); ++k)
        out.push_back(fullrank_tall_path(rest_1[k].W, rest_2[k].W, options.grid));
      return out;
    });
    auto curve = [bridge, rest_1, rest_2, weight_paths, pi = pi_1.table()](double s) {
      std::vector<Layer> rest(rest_1.size());
      for (std::size_t k = 0; k < rest.size(); ++k)
        rest[k] = {weight_paths[k].at(s), lerp(rest_1[k].b, rest_2[k].b, s)};
      return bridge.with_h(rest, pi);
    };
    route.push_back({PathSegment(SegmentKind::WeightSwapWithH, SegmentInvariant::OutputConstant, h_1,
                                 q_end, curve),
                     "bridge", {}});
  }

  const Theta h_2 = guarded(SegmentKind::TabularLift, "bridge", [&] { return bridge.with_h(rest_2, pi_2.table()); });
  if (q_end == h_2) {
    route.push_back({PathSegment::constant(SegmentKind::TabularLift, q_end), "bridge", {}});
  } else {
    auto tab = std::make_shared<TabularPath>(
        guarded(SegmentKind::TabularLift, "bridge", [&] { return TabularPath(mdp, pi_1, pi_2); }));
    auto prescribed = [tab](double u) { return tab->at(1.0 - u).table(); };
    auto curve = [bridge, rest_2, prescribed](double u) { return bridge.with_h(rest_2, prescribed(u)); };
    route.push_back({PathSegment(SegmentKind::TabularLift, SegmentInvariant::ValueBound, q_end, h_2, curve),
                     "bridge", prescribed});
  }

  route.push_back({guarded(SegmentKind::PreimageChain, "end",
                           [&] { return preimage_chain_path(arch, X, v, near_2, h_2, options.grid); })
                       .reversed(),
                   "end", {}});
  return route;
}

void require_compatible(const Mdp& mdp, const NetArchitecture& arch, const Matrix& X,
                        const Theta& t1, const Theta& t2) {
  arch.validate();
  t1.check_shapes(arch);
  t2.check_shapes(arch);
  if (X.rows() != mdp.n_states()) throw ShapeMismatch("feature table needs one row per state");
  if (X.cols() != arch.input_dim()) throw ShapeMismatch("feature width does not match n_0");
  if (arch.output_dim() != mdp.n_actions()) throw ShapeMismatch("output width must equal |A|");
}

}  // namespace

NnPathResult assemble_nn_path(const Mdp& mdp, const NetArchitecture& arch, const Matrix& X,
                              const Theta& theta_1, const Theta& theta_2,
                              const std::vector<RewardTable>& rewards, const NnPathOptions& options) {
  require_compatible(mdp, arch, X, theta_1, theta_2);
  if (arch.depth() < 2) throw InvalidInput("this route needs at least two layers");
  const auto report = check_assumptions(arch, X, mdp.n_actions());
  if (!report.passed()) throw InvalidInput("network or feature assumptions fail");
  if (theta_1 == theta_2)
    return certify(mdp, arch, X, {{PathSegment::constant(SegmentKind::PreimageChain, theta_1), "start", {}}},
                   rewards, options);

  const double beta = arch.beta;
  const Policy pi_1 = forward(arch, theta_1, X).policy;
  const Policy pi_2 = forward(arch, theta_2, X).policy;
  auto restore = [&](const Theta& t, std::uint64_t s, const char* side) {
    return guarded(SegmentKind::RankRestoreFirstLayer, side, [&] {
      const BlockPath p = rank_restore_first_layer(X, {t.layers[0].W, t.layers[0].b, t.layers[1].W}, beta, s);
      return block_segment(SegmentKind::RankRestoreFirstLayer, t, p);
    });
  };
  // Both sides: W_3..W_L to full column rank, then a full-rank first layer.
  const PathSegment repair_1 = guarded(SegmentKind::WeightFullrankRepair, "start", [&] {
    return weight_fullrank_repair(arch, X, theta_1, derive_seed(options.seed, 1), 3);
  });
  const PathSegment repair_2 = guarded(SegmentKind::WeightFullrankRepair, "end", [&] {
    return weight_fullrank_repair(arch, X, theta_2, derive_seed(options.seed, 2), 3);
  });
  const PathSegment restore_1 = restore(repair_1.end(), derive_seed(options.seed, 3), "start");
  const PathSegment restore_2 = restore(repair_2.end(), derive_seed(options.seed, 4), "end");
  const Theta& near_2 = restore_2.end();
  const PathSegment swap_1 = guarded(SegmentKind::FirstLayerSwap, "start", [&] {
    const Theta& t = restore_1.end();
    const BlockPath p = first_layer_swap(X, {t.layers[0].W, t.layers[0].b, t.layers[1].W},
                                         near_2.layers[0].W, near_2.layers[0].b, beta,
                                         derive_seed(options.seed, 5));
    return block_segment(SegmentKind::FirstLayerSwap, t, p);
  });

  Bridge bridge{&arch, 1, block_activation(X, near_2.layers[0].W, near_2.layers[0].b, beta), {near_2.layers[0]}};
  std::vector<RouteEntry> route;
  route.push_back({repair_1, "start", {}});
  route.push_back({restore_1, "start", {}});
  route.push_back({swap_1, "start", {}});
  for (auto& e : bridge_route(mdp, arch, X, bridge, swap_1.end(), near_2, pi_1, pi_2, options))
    route.push_back(std::move(e));
  route.push_back({restore_2.reversed(), "end", {}});
  route.push_back({repair_2.reversed(), "end", {}});
  return certify(mdp, arch, X, std::move(route), rewards, options);
}

NnPathResult assemble_direct_path(const Mdp& mdp, const NetArchitecture& arch, const Matrix& X,
                                  const Theta& theta_1, const Theta& theta_2,
                                  const std::vector<RewardTable>& rewards, const NnPathOptions& options) {
  require_compatible(mdp, arch, X, theta_1, theta_2);
  if (numerical_rank(X, kPinvTol) != X.rows()) throw RankDeficient("feature table lacks rank |S|");
  if (theta_1 == theta_2)
    return certify(mdp, arch, X, {{PathSegment::constant(SegmentKind::PreimageChain, theta_1), "start", {}}},
                   rewards, options);
  const Policy pi_1 = forward(arch, theta_1, X).policy;
  const Policy pi_2 = forward(arch, theta_2, X).policy;
  const PathSegment repair_1 = guarded(SegmentKind::WeightFullrankRepair, "start", [&] {
    return weight_fullrank_repair(arch, X, theta_1, derive_seed(options.seed, 1), 2);
  });
  const PathSegment repair_2 = guarded(SegmentKind::WeightFullrankRepair, "end", [&] {
    return weight_fullrank_repair(arch, X, theta_2, derive_seed(options.seed, 2), 2);
  });
  Bridge bridge{&arch, 0, X, {}};
  std::vector<RouteEntry> route;
  route.push_back({repair_1, "start", {}});
  for (auto& e : bridge_route(mdp, arch, X, bridge, repair_1.end(), repair_2.end(), pi_1, pi_2, options))
    route.push_back(std::move(e));
  route.push_back({repair_2.reversed(), "end", {}});
  return certify(mdp, arch, X, std::move(route), rewards, options);
}

Json path_manifest(const NnPathResult& result) {
  Json j;
  j["certified"] = result.certified;
  j["failure"] = result.failure;
  j["samples"] = result.trace.alphas.size();
  Json segs = Json::array();
  for (const auto& s : result.segments) {
    Json sj;
    sj["kind"] = std::string(to_string(s.kind));
    sj["side"] = s.side;
    sj["invariant"] = s.invariant == SegmentInvariant::OutputConstant ? "output-constant" : "value-bound";
    sj["samples"] = s.samples;
    sj["max_output_drift"] = s.max_output_drift;
    sj["max_lift_error"] = s.max_lift_error;
    sj["max_param_step"] = s.max_param_step;
    segs.push_back(std::move(sj));
  }
  j["segments"] = std::move(segs);
  j["bounds"] = result.bounds;
  Json mins = Json::array();
  for (const auto& curve : result.trace.values)
    mins.push_back(curve.empty() ? 0.0 : *std::min_element(curve.begin(), curve.end()));
  j["min_values"] = std::move(mins);
  return j;
}

}  // namespace rlconn
