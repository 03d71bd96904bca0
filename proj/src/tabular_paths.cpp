#include "rlconn/tabular_paths.hpp"

#include <cmath>
#include <map>
#include <optional>

#include "rlconn/errors.hpp"

namespace rlconn {

TabularPath::TabularPath(const Mdp& mdp, Policy pi1, Policy pi2)
    : pi1_(std::move(pi1)), pi2_(std::move(pi2)) {
  mu1_ = stationary_distribution(transition_matrix(mdp, pi1_)).mu;
  mu2_ = stationary_distribution(transition_matrix(mdp, pi2_)).mu;
  occ1_ = mu1_.asDiagonal() * pi1_.table();
  occ2_ = mu2_.asDiagonal() * pi2_.table();
}

Policy TabularPath::at(double alpha) const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidInput("alpha must lie in [0, 1]");
  if (alpha == 1.0) return pi1_;
  if (alpha == 0.0) return pi2_;
  Matrix table(pi1_.n_states(), pi1_.n_actions());
  for (Eigen::Index s = 0; s < table.rows(); ++s) {
    const double w1 = alpha * mu1_(s);
    const double w2 = (1.0 - alpha) * mu2_(s);
    table.row(s) = (w1 * pi1_.table().row(s) + w2 * pi2_.table().row(s)) / (w1 + w2);
    table.row(s) /= table.row(s).sum();
  }
  return Policy(std::move(table));
}

Matrix TabularPath::linear_occupancy(double alpha) const {
  return alpha * occ1_ + (1.0 - alpha) * occ2_;
}

Policy interpolate_policies(const Mdp& mdp, const Policy& pi1, const Policy& pi2, double alpha) {
  return TabularPath(mdp, pi1, pi2).at(alpha);
}

LinearityReport verify_stationary_linearity(const Mdp& mdp, const Policy& pi1, const Policy& pi2,
                                            const std::vector<double>& grid) {
  validate_grid(grid);
  const TabularPath path(mdp, pi1, pi2);
  LinearityReport report;
  for (double a : grid) {
    const Vector mu = stationary_distribution(transition_matrix(mdp, path.at(a))).mu;
    const Vector lin = a * path.first_stationary() + (1.0 - a) * path.second_stationary();
    const double r = (mu - lin).cwiseAbs().maxCoeff();
    report.alphas.push_back(a);
    report.residuals.push_back(r);
    report.max_residual = std::max(report.max_residual, r);
  }
  return report;
}

namespace {

struct Sample {
  Policy policy;
  Matrix occupancy;  // recomputed from the policy, not from the linear formula
  double stationary_residual;
  double occupancy_residual;
};

Sample evaluate(const Mdp& mdp, const TabularPath& path, double alpha) {
  Policy pi = path.at(alpha);
  const Vector mu = stationary_distribution(transition_matrix(mdp, pi)).mu;
  Matrix occ = mu.asDiagonal() * pi.table();
  const Vector lin_mu = alpha * path.first_stationary() + (1.0 - alpha) * path.second_stationary();
  const double st = (mu - lin_mu).cwiseAbs().maxCoeff();
  const double oc = (occ - path.linear_occupancy(alpha)).cwiseAbs().maxCoeff();
  return {std::move(pi), std::move(occ), st, oc};
}

}  // namespace

PathTrace<Policy> verify_equiconnectedness(const Mdp& mdp, const Policy& pi1, const Policy& pi2,
                                           const std::vector<RewardTable>& rewards,
                                           const std::vector<double>& grid,
                                           const EquiconnectOptions& options) {
  validate_grid(grid);
  for (const auto& r : rewards)
    if (r.rows() != mdp.n_states() || r.cols() != mdp.n_actions())
      throw ShapeMismatch("reward table shape does not match the MDP");
  const TabularPath path(mdp, pi1, pi2);

  // Sampling schedule: depends on the policies and dynamics only.
  std::map<double, Sample> samples;
  for (double a : grid) samples.emplace(a, evaluate(mdp, path, a));
  const double spread =
      (path.linear_occupancy(1.0) - path.linear_occupancy(0.0)).cwiseAbs().sum();
  const double threshold = options.refine_fraction * spread + 1e-12;
  std::function<void(double, double, int)> refine = [&](double lo, double hi, int depth) {
    if (depth >= options.max_refine_depth) return;
    const double change = (samples.at(hi).occupancy - samples.at(lo).occupancy).cwiseAbs().sum();
    if (change <= threshold) return;
    const double mid = 0.5 * (lo + hi);
    if (!(mid > lo && mid < hi)) return;
    samples.emplace(mid, evaluate(mdp, path, mid));
    refine(lo, mid, depth + 1);
    refine(mid, hi, depth + 1);
  };
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) refine(grid[i], grid[i + 1], 0);

  PathTrace<Policy> trace;
  std::vector<double> st, oc;
  for (auto& [a, s] : samples) {
    trace.alphas.push_back(a);
    trace.points.push_back(s.policy);
    st.push_back(s.stationary_residual);
    oc.push_back(s.occupancy_residual);
  }
  trace.residuals.emplace_back("stationary_linearity", std::move(st));
  trace.residuals.emplace_back("occupancy_linearity", std::move(oc));

  for (std::size_t k = 0; k < rewards.size(); ++k) {
    const RewardTable& r = rewards[k];
    const double bound = std::min(samples.at(1.0).occupancy.cwiseProduct(r).sum(),
                                  samples.at(0.0).occupancy.cwiseProduct(r).sum());
    std::vector<double> curve;
    curve.reserve(samples.size());
    for (const auto& [a, s] : samples) {
      const double v = s.occupancy.cwiseProduct(r).sum();
      if (v < bound - options.tol) throw BoundViolated(k, a, v, bound);
      curve.push_back(v);
    }
    trace.values.push_back(std::move(curve));
  }
  return trace;
}

PreferredPolicy select_preferred_on_path(const Mdp& mdp, const Policy& pi1, const Policy& pi2,
                                         const PolicyPreference& preference,
                                         const std::vector<double>& grid,
                                         const RewardTable& reward, double level) {
  validate_grid(grid);
  const TabularPath path(mdp, pi1, pi2);
  std::optional<PreferredPolicy> best;
  double best_score = -kInf;
  for (double a : grid) {
    Policy pi = path.at(a);
    const double score = preference(pi);
    if (!best || score > best_score) {
      best_score = score;
      best = PreferredPolicy{a, std::move(pi), 0.0};
    }
  }
  best->value = average_reward(mdp, best->policy, reward);
  if (best->value < level - 1e-9) throw BoundViolated(0, best->alpha, best->value, level);
  return *best;
}

double policy_entropy(const Policy& pi) {
  double h = 0.0;
  const Matrix& t = pi.table();
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const double p = t.data()[i];
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace rlconn
