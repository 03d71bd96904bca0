#include <algorithm>
#include <random>

#include "doctest.h"
#include "rlconn/errors.hpp"
#include "rlconn/neural_paths.hpp"
#include "rlconn/tabular_paths.hpp"

using namespace rlconn;

namespace {

Matrix gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  return Matrix::NullaryExpr(r, c, [&] { return n(rng); });
}

Matrix random_stochastic(std::mt19937_64& rng, int r, int c) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Matrix m = Matrix::NullaryExpr(r, c, [&] { return u(rng); });
  for (int i = 0; i < r; ++i) m.row(i) /= m.row(i).sum();
  return m;
}

Matrix random_reward(std::mt19937_64& rng, int S, int A) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return Matrix::NullaryExpr(S, A, [&] { return u(rng); });
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

std::vector<Layer> tail(const Theta& t, std::size_t from) {
  return {t.layers.begin() + static_cast<std::ptrdiff_t>(from), t.layers.end()};
}

double product_drift(const Matrix& X, const BlockPath& path, double beta, int samples) {
  const Matrix Z = block_product(X, path.keyframes().front(), beta);
  double drift = 0.0;
  for (int i = 0; i <= samples; ++i)
    drift = std::max(drift, max_abs(block_product(X, path.at(double(i) / samples), beta) - Z));
  return drift;
}

const NetArchitecture kArch{{3, 6, 4, 2}};

}  // namespace

TEST_CASE("pseudo-inverse of a rank-one matrix") {
  std::mt19937_64 rng(1);
  const Vector u = gaussian(rng, 5, 1), v = gaussian(rng, 3, 1);
  const Matrix expected = v * u.transpose() / (u.squaredNorm() * v.squaredNorm());
  CHECK(max_abs(pinv(u * v.transpose()) - expected) <= 1e-10);
  CHECK(max_abs(pinv(Matrix::Identity(4, 4)) - Matrix::Identity(4, 4)) <= 1e-15);
  const Matrix T = gaussian(rng, 6, 3);
  CHECK(max_abs(pinv(T) * T - Matrix::Identity(3, 3)) <= 1e-10);
}

TEST_CASE("h-map reproduces the target policy") {
  std::mt19937_64 rng(2);
  const Matrix X = default_features(3, 3);
  const Theta theta = random_theta(kArch, 5);
  const auto rest = tail(theta, 1);

  // uniform target: the logits it rebuilds are row constants
  const Layer l = h_map(X, rest, Matrix::Constant(3, 2, 0.5), kArch.beta);
  Theta t = theta;
  t.layers[0] = l;
  const auto out = forward(kArch, t, X);
  Matrix centered = out.logits;
  centered.colwise() -= out.logits.rowwise().mean();
  CHECK(max_abs(centered) <= 1e-10);

  for (int trial = 0; trial < 20; ++trial) {
    const Matrix pi = random_stochastic(rng, 3, 2);
    t.layers[0] = h_map(X, rest, pi, kArch.beta);
    CHECK(max_abs(forward(kArch, t, X).policy.table() - pi) <= 1e-8);
  }

  // a sub-network input of higher dimension than the features
  const Matrix M = leaky_relu(gaussian(rng, 3, 6), kArch.beta);
  const Matrix pi = random_stochastic(rng, 3, 2);
  const Layer second = h_map(M, tail(theta, 2), pi, kArch.beta);
  const auto pass = forward_layers(M, std::vector<Layer>{second, theta.layers[2]}, kArch.beta);
  CHECK(max_abs(pass.post.back() - pi) <= 1e-8);

  std::vector<Layer> deficient = rest;
  deficient[0].W.col(1).setZero();
  CHECK_THROWS_AS(h_map(X, deficient, pi, kArch.beta), RankDeficient);
  Matrix zero_entry = pi;
  zero_entry(0, 0) = 0.0;
  zero_entry(0, 1) = 1.0;
  CHECK_THROWS_AS(h_map(X, rest, zero_entry, kArch.beta), NonPositivePolicy);
  Matrix dup = X;
  dup.row(1) = dup.row(0);
  CHECK_THROWS_AS(h_map(dup, rest, pi, kArch.beta), RankDeficient);
}

TEST_CASE("exact policy realization") {
  std::mt19937_64 rng(3);
  const Matrix X = default_features(3, 3);
  const auto rest = tail(random_theta(kArch, 6), 1);
  const Theta u = realize_policy(kArch, X, rest, Policy::uniform(3, 2));
  CHECK(max_abs(forward(kArch, u, X).policy.table() - Policy::uniform(3, 2).table()) <= 1e-12);

  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Policy pi(random_stochastic(rng, 3, 2));
    const Theta t = realize_policy(kArch, X, rest, pi);
    worst = std::max(worst, max_abs(forward(kArch, t, X).policy.table() - pi.table()));
  }
  CHECK(worst <= 1e-8);

  CHECK_THROWS_AS(realize_policy(kArch, X, rest, Policy::deterministic({0, 1, 0}, 2)), PolicyFloorViolated);
}

TEST_CASE("smoothed optimal policy keeps its value") {
  const double eps = 1e-6;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Mdp m = random_ergodic_mdp(seed, 3, 2);
    double best = -1e300;
    Policy best_pi = Policy::uniform(3, 2);
    for (const auto& p : enumerate_deterministic_policies(m)) {
      const double v = average_reward(m, p);
      if (v > best) best = v, best_pi = p;
    }
    const Policy smooth = smooth_policy(best_pi, eps);
    CHECK(smooth.table().minCoeff() >= eps * (1 - 1e-12));
    const Matrix X = default_features(3, 3);
    const Theta t = realize_policy(kArch, X, tail(random_theta(kArch, seed), 1), smooth);
    const double J = value_of_theta(m, kArch, t, X);
    CHECK(std::abs(J - best) <= m.reward_bound() * 3 * 2 * eps);
  }
}

TEST_CASE("preimage chain") {
  std::mt19937_64 rng(4);
  const Matrix X = default_features(3, 3);
  const Theta a = random_theta(kArch, 8);
  const auto grid = uniform_grid(101);

  SUBCASE("identical endpoints give a constant segment") {
    const PathSegment s = preimage_chain_path(kArch, X, 0, a, a, grid);
    CHECK(s.is_constant());
    CHECK(s.at(0.4) == a);
  }

  SUBCASE("canonical preimage of the same policy") {
    const Theta b = realize_policy(kArch, X, tail(a, 1), forward(kArch, a, X).policy);
    const PathSegment s = preimage_chain_path(kArch, X, 0, a, b, grid);
    CHECK(s.at(0.0) == a);
    CHECK(s.at(1.0) == b);
    CHECK(max_output_drift(kArch, X, s, uniform_grid(1001)) <= 1e-7);
    const PathSegment r = s.reversed();
    CHECK(r.start() == b);
    CHECK(r.end() == a);
    CHECK(r.at(0.3) == s.at(0.7));
  }

  SUBCASE("kernel perturbation is a straight line") {
    const Matrix X4 = default_features(3, 4);
    const NetArchitecture wide{{4, 6, 4, 2}};
    const Theta t = random_theta(wide, 9);
    const Matrix N = null_space(with_ones_column(X4));
    REQUIRE(N.cols() == 2);
    const Matrix delta = N * gaussian(rng, 2, 6);
    Theta b = t;
    b.layers[0].W += delta.topRows(4);
    b.layers[0].b += delta.row(4).transpose();
    const PathSegment s = preimage_chain_path(wide, X4, 0, t, b, grid);
    const Matrix pre = forward(wide, t, X4).layer_outputs[0];
    for (double alpha : {0.1, 0.25, 0.5, 0.9}) {
      const Theta p = s.at(alpha);
      CHECK(max_abs(p.layers[0].W - ((1 - alpha) * t.layers[0].W + alpha * b.layers[0].W)) <= 1e-12);
      CHECK(max_abs(p.layers[0].b - ((1 - alpha) * t.layers[0].b + alpha * b.layers[0].b)) <= 1e-12);
      CHECK(max_abs(forward(wide, p, X4).layer_outputs[0] - pre) <= 1e-12);
    }
  }

  SUBCASE("middle layer varies over a hidden input") {
    const Matrix F1 = forward(kArch, a, X).layer_outputs[0];
    Theta b = a;
    b.layers[1] = h_map(F1, tail(a, 2), forward(kArch, a, X).policy.table(), kArch.beta);
    const PathSegment s = preimage_chain_path(kArch, X, 1, a, b, grid);
    CHECK(max_output_drift(kArch, X, s, grid) <= 1e-7);
  }

  SUBCASE("last layer varies") {
    const NetArchitecture one{{3, 2}};
    const Theta t = random_theta(one, 2);
    const Theta b = realize_policy(one, X, {}, forward(one, t, X).policy);
    const PathSegment s = preimage_chain_path(one, X, 0, t, b, grid);
    CHECK(max_output_drift(one, X, s, grid) <= 1e-7);
  }

  SUBCASE("mismatched endpoints are rejected") {
    const Theta other = random_theta(kArch, 99);
    CHECK_THROWS_AS(preimage_chain_path(kArch, X, 0, a, other, grid), InvalidInput);
    Theta b = a;
    b.layers[0] = h_map(X, tail(a, 1), random_stochastic(rng, 3, 2), kArch.beta);
    CHECK_THROWS_AS(preimage_chain_path(kArch, X, 0, a, b, grid), InvalidInput);
  }
}

TEST_CASE("first-layer rank restoration") {
  const Matrix X = Matrix::Identity(3, 3);
  const double beta = kArch.beta;
  std::mt19937_64 rng(5);

  SUBCASE("full rank is left alone") {
    const Theta t = random_theta(kArch, 1);
    const BlockPath p = rank_restore_first_layer(X, {t.layers[0].W, t.layers[0].b, t.layers[1].W}, beta, 1);
    CHECK(p.keyframes().size() == 1);
  }

  SUBCASE("duplicated neurons, rank one short") {
    // every neuron is silent on state 2, and neurons 0 and 1 coincide
    FirstLayerBlock blk{gaussian(rng, 3, 6), gaussian(rng, 6, 1), gaussian(rng, 6, 4)};
    for (int j = 0; j < 6; ++j) blk.W(2, j) = -blk.b(j);
    blk.W.col(1) = blk.W.col(0);
    blk.b(1) = blk.b(0);
    const Matrix A0 = block_activation(X, blk.W, blk.b, beta);
    REQUIRE(numerical_rank(A0, 1e-6) == 2);
    const BlockPath p = rank_restore_first_layer(X, blk, beta, 7);
    CHECK(p.keyframes().size() == 3);
    const FirstLayerBlock& last = p.keyframes().back();
    const Svd d = svd(block_activation(X, last.W, last.b, beta));
    CHECK(d.singular(2) >= 1e-6 * d.singular(0));
    CHECK(product_drift(X, p, beta, 200) <= 1e-9);
  }

  SUBCASE("rank two short") {
    FirstLayerBlock blk{gaussian(rng, 3, 6), gaussian(rng, 6, 1), gaussian(rng, 6, 4)};
    for (int j = 0; j < 6; ++j) blk.W(1, j) = blk.W(2, j) = -blk.b(j);
    REQUIRE(numerical_rank(block_activation(X, blk.W, blk.b, beta), 1e-6) == 1);
    const BlockPath p = rank_restore_first_layer(X, blk, beta, 8);
    const auto rounds = (p.keyframes().size() - 1) / 2;
    CHECK(rounds >= 2);
    CHECK(rounds <= 6);
    const FirstLayerBlock& last = p.keyframes().back();
    CHECK(numerical_rank(block_activation(X, last.W, last.b, beta), 1e-6) == 3);
    CHECK(product_drift(X, p, beta, 300) <= 1e-8);
  }

  SUBCASE("narrow layers are rejected") {
    FirstLayerBlock blk{Matrix::Zero(3, 3), Vector::Zero(3), Matrix::Zero(3, 2)};
    CHECK_THROWS_AS(rank_restore_first_layer(X, blk, beta, 1), InvalidInput);
  }
}

TEST_CASE("first-layer swap") {
  const Matrix X = default_features(3, 3);
  const double beta = kArch.beta;
  const Theta t = random_theta(kArch, 12);
  const FirstLayerBlock src{t.layers[0].W, t.layers[0].b, t.layers[1].W};

  SUBCASE("same target") {
    CHECK(first_layer_swap(X, src, src.W, src.b, beta, 1).keyframes().size() == 1);
  }

  SUBCASE("permuted neurons") {
    const std::vector<int> perm{3, 0, 5, 1, 4, 2};
    FirstLayerBlock permuted = src;
    for (int j = 0; j < 6; ++j) {
      permuted.W.col(j) = src.W.col(perm[j]);
      permuted.b(j) = src.b(perm[j]);
      permuted.V.row(j) = src.V.row(perm[j]);
    }
    CHECK(max_abs(block_product(X, permuted, beta) - block_product(X, src, beta)) <= 1e-14);
    const BlockPath p = first_layer_swap(X, src, permuted.W, permuted.b, beta, 2);
    CHECK(p.keyframes().back().W == permuted.W);
    CHECK(p.keyframes().back().b == permuted.b);
    CHECK(product_drift(X, p, beta, 500) <= 1e-10);
  }

  SUBCASE("random pairs at the minimum width") {
    for (std::uint64_t seed = 20; seed < 30; ++seed) {
      const Theta target = random_theta(kArch, seed);
      const BlockPath p = first_layer_swap(X, src, target.layers[0].W, target.layers[0].b, beta, seed);
      CHECK(p.at(1.0).W == target.layers[0].W);
      CHECK(p.at(1.0).b == target.layers[0].b);
      CHECK(product_drift(X, p, beta, 500) <= 1e-8);
    }
  }

  SUBCASE("rank-deficient source") {
    FirstLayerBlock bad = src;
    bad.W.setZero();
    bad.b.setZero();
    CHECK_THROWS_AS(first_layer_swap(X, bad, src.W, src.b, beta, 1), RankDeficient);
  }
}

TEST_CASE("paths through full-column-rank matrices") {
  std::mt19937_64 rng(6);
  const auto grid = uniform_grid(101);
  const auto fine = uniform_grid(2001);
  auto min_sv = [&](const MatrixPath& p) {
    double m = 1e300;
    for (double t : fine) m = std::min(m, min_singular_value(p.at(t)));
    return m;
  };

  SUBCASE("constant") {
    const Matrix F = gaussian(rng, 4, 2);
    const MatrixPath p = fullrank_tall_path(F, F, grid);
    CHECK(p.at(0.5) == F);
  }

  SUBCASE("antipodal endpoints") {
    for (auto [m, n] : {std::pair{3, 1}, std::pair{4, 2}, std::pair{6, 2}, std::pair{5, 4}}) {
      const Matrix F = gaussian(rng, m, n);
      const MatrixPath p = fullrank_tall_path(F, -F, grid);
      CHECK(p.at(0.0) == F);
      CHECK(p.at(1.0) == -F);
      CHECK_FALSE(p.planes().empty());
      CHECK(min_sv(p) >= 1e-9);
      // the straight chord would pass through zero
      CHECK(min_singular_value(0.5 * F + 0.5 * (-F)) == 0.0);
    }
  }

  SUBCASE("random pairs") {
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix A = gaussian(rng, 6, 2), B = gaussian(rng, 6, 2);
      const MatrixPath p = fullrank_tall_path(A, B, grid);
      CHECK(p.at(0.0) == A);
      CHECK(p.at(1.0) == B);
      CHECK(min_sv(p) >= 1e-9);
      CHECK(max_abs(p.at(1e-9) - A) <= 1e-6);
      CHECK(max_abs(p.at(1.0 - 1e-9) - B) <= 1e-6);
    }
  }

  SUBCASE("bad inputs") {
    CHECK_THROWS_AS(fullrank_tall_path(gaussian(rng, 3, 3), gaussian(rng, 3, 3), grid), InvalidInput);
    const Matrix F = gaussian(rng, 4, 2);
    CHECK_THROWS_AS(fullrank_tall_path(F, gaussian(rng, 4, 3), grid), ShapeMismatch);
    Matrix def = F;
    def.col(1) = def.col(0);
    CHECK_THROWS_AS(fullrank_tall_path(F, def, grid), RankDeficient);
  }
}

TEST_CASE("weight repair") {
  const Matrix X = default_features(3, 3);
  const auto grid = uniform_grid(101);

  SUBCASE("already full rank") {
    CHECK(weight_fullrank_repair(kArch, X, random_theta(kArch, 1), 1).is_constant());
  }

  SUBCASE("zeroed column of the second weight") {
    Theta t = random_theta(kArch, 2);
    t.layers[1].W.col(2).setZero();
    const PathSegment s = weight_fullrank_repair(kArch, X, t, 3);
    CHECK_FALSE(s.is_constant());
    for (const auto& l : tail(s.end(), 1)) CHECK(numerical_rank(l.W) == l.W.cols());
    const Matrix logits = forward(kArch, t, X).logits;
    double drift = 0.0;
    for (double a : grid) drift = std::max(drift, max_abs(forward(kArch, s.at(a), X).logits - logits));
    CHECK(drift <= 1e-9);
    CHECK(s.end().layers[0] == t.layers[0]);
  }

  SUBCASE("trivial kernel") {
    const NetArchitecture narrow{{3, 6, 3, 2}};
    Theta t = random_theta(narrow, 4);
    t.layers[2].W.col(1).setZero();
    CHECK_THROWS_AS(weight_fullrank_repair(narrow, X, t, 1), RepairUnavailable);
  }
}

TEST_CASE("assembled path between equal networks") {
  const Mdp m = random_ergodic_mdp(1, 3, 2);
  const Matrix X = default_features(3, 3);
  const Theta t = random_theta(kArch, 3);
  std::mt19937_64 rng(7);
  const NnPathResult r = assemble_nn_path(m, kArch, X, t, t, {random_reward(rng, 3, 2)}, {});
  CHECK(r.certified);
  CHECK(r.path.segments().size() == 1);
  CHECK(r.path.at(0.37) == t);
}

TEST_CASE("assembled path between two realizations of one policy") {
  const Mdp m = random_ergodic_mdp(2, 3, 2);
  const Matrix X = default_features(3, 3);
  const Theta t1 = random_theta(kArch, 4);
  const Policy pi = forward(kArch, t1, X).policy;
  const Theta t2 = realize_policy(kArch, X, tail(random_theta(kArch, 5), 1), pi);
  std::mt19937_64 rng(8);
  const NnPathResult r = assemble_nn_path(m, kArch, X, t1, t2, {random_reward(rng, 3, 2)}, {});
  CHECK_MESSAGE(r.certified, r.failure);
  double drift = 0.0;
  for (const auto& th : r.trace.points) drift = std::max(drift, max_abs(forward(kArch, th, X).policy.table() - pi.table()));
  CHECK(drift <= 1e-6);
}

TEST_CASE("assembled paths certify the value bound") {
  std::mt19937_64 rng(9);
  const Matrix X = default_features(3, 3);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Mdp m = random_ergodic_mdp(100 + seed, 3, 2);
    const Theta t1 = random_theta(kArch, 2 * seed + 1), t2 = random_theta(kArch, 2 * seed + 2);
    std::vector<RewardTable> rewards;
    for (int k = 0; k < 4; ++k) rewards.push_back(random_reward(rng, 3, 2));
    NnPathOptions opt;
    opt.seed = seed;
    const NnPathResult r = assemble_nn_path(m, kArch, X, t1, t2, rewards, opt);
    CHECK_MESSAGE(r.certified, r.failure);
    const auto& segs = r.path.segments();
    REQUIRE(segs.size() == 9);
    CHECK(segs.front().start() == t1);
    CHECK(segs.back().end() == t2);
    for (std::size_t i = 1; i < segs.size(); ++i) CHECK(to_json(segs[i - 1].end()).dump() == to_json(segs[i].start()).dump());
    CHECK(segs[5].kind() == SegmentKind::TabularLift);
    for (const auto& s : r.segments)
      if (s.invariant == SegmentInvariant::OutputConstant) CHECK(s.max_output_drift <= 1e-6);
    for (std::size_t k = 0; k < rewards.size(); ++k) {
      CHECK(r.bounds[k] == doctest::Approx(std::min(value_of_theta(m, kArch, t1, X, rewards[k]),
                                                    value_of_theta(m, kArch, t2, X, rewards[k]))));
      CHECK(*std::min_element(r.trace.values[k].begin(), r.trace.values[k].end()) >= r.bounds[k] - 1e-6);
    }

    // the schedule does not depend on the rewards
    const NnPathResult other = assemble_nn_path(m, kArch, X, t1, t2, {random_reward(rng, 3, 2)}, opt);
    CHECK(other.trace.alphas == r.trace.alphas);
    CHECK(other.trace.points == r.trace.points);
  }
}

TEST_CASE("direct route with full-rank features") {
  std::mt19937_64 rng(10);
  const Mdp m = random_ergodic_mdp(7, 3, 2);
  const Matrix X = default_features(3, 3);
  for (const NetArchitecture& arch : {NetArchitecture{{3, 2}}, NetArchitecture{{3, 4, 2}}, kArch}) {
    const Theta t1 = random_theta(arch, 1), t2 = random_theta(arch, 2);
    const NnPathResult r = assemble_direct_path(m, arch, X, t1, t2, {random_reward(rng, 3, 2), random_reward(rng, 3, 2)}, {});
    CHECK_MESSAGE(r.certified, r.failure);
    CHECK(r.path.start() == t1);
    CHECK(r.path.end() == t2);
  }
  CHECK_THROWS_AS(assemble_direct_path(m, kArch, default_features(3, 2).leftCols(2), random_theta(NetArchitecture{{2, 6, 4, 2}}, 1),
                                       random_theta(NetArchitecture{{2, 6, 4, 2}}, 2), {}, {}),
                  ShapeMismatch);
}

TEST_CASE("segment failures name the segment") {
  const Mdp m = random_ergodic_mdp(3, 3, 2);
  const Matrix X = default_features(3, 3);
  const NetArchitecture narrow{{3, 6, 3, 2}};
  Theta t1 = random_theta(narrow, 1);
  t1.layers[2].W.col(0).setZero();
  try {
    assemble_nn_path(m, narrow, X, t1, random_theta(narrow, 2), {}, {});
    FAIL("expected a segment failure");
  } catch (const SegmentFailure& e) {
    CHECK(e.kind() == "weight-fullrank-repair");
    CHECK(e.side() == "start");
  }
  CHECK_THROWS_AS(assemble_nn_path(m, NetArchitecture{{3, 5, 4, 2}}, X, random_theta(NetArchitecture{{3, 5, 4, 2}}, 1),
                                   random_theta(NetArchitecture{{3, 5, 4, 2}}, 2), {}, {}),
                  InvalidInput);
}

TEST_CASE("manifest") {
  const Mdp m = random_ergodic_mdp(4, 3, 2);
  const Matrix X = default_features(3, 3);
  std::mt19937_64 rng(11);
  const NnPathResult r = assemble_direct_path(m, kArch, X, random_theta(kArch, 1), random_theta(kArch, 2),
                                              {random_reward(rng, 3, 2)}, {});
  const Json j = path_manifest(r);
  CHECK(j["certified"].get<bool>() == r.certified);
  CHECK(j["segments"].size() == r.segments.size());
  CHECK(j["segments"][0]["kind"] == "weight-fullrank-repair");
  CHECK(j["samples"].get<std::size_t>() == r.trace.alphas.size());
}
