#include "rlconn/neural_policy.hpp"

#include <cmath>
#include <random>
#include <set>

#include "rlconn/errors.hpp"

namespace rlconn {

void NetArchitecture::validate() const {
  if (widths.size() < 2) throw InvalidInput("architecture needs at least one layer");
  for (int w : widths)
    if (w <= 0) throw InvalidInput("layer widths must be positive");
  if (!(beta > 0.0 && beta < 1.0)) throw InvalidInput("leaky slope must lie in (0, 1)");
}

void Theta::check_shapes(const NetArchitecture& arch) const {
  if (static_cast<int>(layers.size()) != arch.depth())
    throw ShapeMismatch("theta has " + std::to_string(layers.size()) + " layers, architecture " +
                        std::to_string(arch.depth()));
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    if (l.W.rows() != arch.widths[k] || l.W.cols() != arch.widths[k + 1] ||
        l.b.size() != arch.widths[k + 1])
      throw ShapeMismatch("layer " + std::to_string(k + 1) + " does not match the architecture");
  }
}

double Theta::distance(const Theta& o) const {
  if (layers.size() != o.layers.size()) throw ShapeMismatch("theta depth mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < layers.size(); ++k)
    acc += (layers[k].W - o.layers[k].W).squaredNorm() + (layers[k].b - o.layers[k].b).squaredNorm();
  return std::sqrt(acc);
}

Matrix softmax_rows(const Matrix& M) {
  Matrix out(M.rows(), M.cols());
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    const double m = M.row(i).maxCoeff();
    out.row(i) = (M.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Matrix softmax_inv_rows(const Matrix& M) {
  if (!(M.array() > 0.0).all()) throw NonPositiveEntry("softmax inverse needs strictly positive entries");
  Matrix L = M.array().log().matrix();
  for (Eigen::Index i = 0; i < L.rows(); ++i) L.row(i).array() -= L.row(i).mean();
  return L;
}

Matrix leaky_relu(const Matrix& x, double beta) {
  return x.unaryExpr([beta](double v) { return v >= 0.0 ? v : beta * v; });
}

Matrix leaky_relu_inv(const Matrix& y, double beta) {
  return y.unaryExpr([beta](double v) { return v >= 0.0 ? v : v / beta; });
}

Matrix with_ones_column(const Matrix& M) {
  Matrix out(M.rows(), M.cols() + 1);
  out.leftCols(M.cols()) = M;
  out.col(M.cols()).setOnes();
  return out;
}

ForwardPass forward_layers(const Matrix& M, std::span<const Layer> layers, double beta) {
  if (layers.empty()) throw InvalidInput("no layers to evaluate");
  ForwardPass out;
  const Matrix* in = &M;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const Layer& l = layers[k];
    if (in->cols() != l.W.rows() || l.b.size() != l.W.cols())
      throw ShapeMismatch("layer input width mismatch");
    Matrix pre = (*in) * l.W;
    pre.rowwise() += l.b.transpose();
    out.post.push_back(k + 1 == layers.size() ? softmax_rows(pre) : leaky_relu(pre, beta));
    out.pre.push_back(std::move(pre));
    in = &out.post.back();
  }
  return out;
}

NetworkOutput forward(const NetArchitecture& arch, const Theta& theta, const Matrix& X) {
  arch.validate();
  theta.check_shapes(arch);
  if (X.cols() != arch.input_dim()) throw ShapeMismatch("feature width does not match n_0");
  auto pass = forward_layers(X, theta.layers, arch.beta);
  Matrix logits = pass.pre.back();
  Policy pi(pass.post.back());
  return {std::move(pass.post), std::move(logits), std::move(pi)};
}

AssumptionReport check_assumptions(const NetArchitecture& arch, const Matrix& X, int n_actions) {
  AssumptionReport r;
  const auto S = X.rows();
  const auto& w = arch.widths;
  r.first_layer_wide = w.size() >= 2 && w[1] >= 2 * S;
  r.strictly_decreasing = w.size() >= 2;
  for (std::size_t k = 2; k < w.size(); ++k)
    if (!(w[k - 1] > w[k])) r.strictly_decreasing = false;
  r.output_matches_actions = !w.empty() && w.back() == n_actions;
  r.input_matches_features = !w.empty() && w.front() == X.cols();
  std::set<std::vector<double>> rows;
  for (Eigen::Index s = 0; s < S; ++s) {
    std::vector<double> row;
    for (Eigen::Index j = 0; j < X.cols(); ++j) row.push_back(X(s, j));
    rows.insert(row);
  }
  r.distinct_features = static_cast<Eigen::Index>(rows.size()) == S;
  r.features_full_row_rank = numerical_rank(X) == S;
  return r;
}

double value_of_theta(const Mdp& mdp, const NetArchitecture& arch, const Theta& theta,
                      const Matrix& X, const RewardTable& reward) {
  return average_reward(mdp, forward(arch, theta, X).policy, reward);
}

double value_of_theta(const Mdp& mdp, const NetArchitecture& arch, const Theta& theta,
                      const Matrix& X) {
  return value_of_theta(mdp, arch, theta, X, mdp.reward());
}

Matrix default_features(int n_states, int d) {
  if (n_states <= 0 || d <= 0) throw InvalidInput("feature table dimensions must be positive");
  Matrix X = Matrix::Zero(n_states, d);
  for (int s = 0; s < n_states; ++s) X(s, s % d) = 1.0 + s / d;
  return X;
}

Theta random_theta(const NetArchitecture& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Theta t;
  for (int k = 0; k < arch.depth(); ++k) {
    const int in = arch.widths[static_cast<std::size_t>(k)];
    const int out = arch.widths[static_cast<std::size_t>(k + 1)];
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    Layer l{Matrix(in, out), Vector(out)};
    for (int j = 0; j < out; ++j)
      for (int i = 0; i < in; ++i) l.W(i, j) = scale * n(rng);
    for (int j = 0; j < out; ++j) l.b(j) = 0.1 * n(rng);
    t.layers.push_back(std::move(l));
  }
  return t;
}

Json to_json(const NetArchitecture& arch) {
  Json j;
  j["widths"] = arch.widths;
  j["beta"] = arch.beta;
  return j;
}

NetArchitecture architecture_from_json(const Json& j) {
  try {
    NetArchitecture a;
    a.widths = j.at("widths").get<std::vector<int>>();
    if (j.contains("beta")) a.beta = j.at("beta").get<double>();
    a.validate();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed architecture: ") + e.what());
  }
}

Json to_json(const Theta& theta) {
  Json layers = Json::array();
  for (const auto& l : theta.layers) {
    Json lj;
    lj["W"] = matrix_to_json(l.W);
    lj["b"] = vector_to_json(l.b);
    layers.push_back(std::move(lj));
  }
  return layers;
}

Theta theta_from_json(const Json& j) {
  Theta t;
  for (const auto& lj : j) t.layers.push_back({matrix_from_json(lj.at("W")), vector_from_json(lj.at("b"))});
  return t;
}

}  // namespace rlconn
