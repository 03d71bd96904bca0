#pragma once

// Finite average-reward MDPs: kernels, policies, stationary quantities.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rlconn/numerics.hpp"
#include "rlconn/serialize.hpp"

namespace rlconn {

/// r(s, a) laid out as an |S| x |A| matrix.
using RewardTable = Matrix;

/// Row-stochastic table pi(a|s), |S| x |A|. Validated on construction.
class Policy {
 public:
  explicit Policy(Matrix table);

  static Policy uniform(int n_states, int n_actions);
  /// Point mass on actions[s] in every state s.
  static Policy deterministic(const std::vector<int>& actions, int n_actions);

  const Matrix& table() const noexcept { return table_; }
  int n_states() const noexcept { return static_cast<int>(table_.rows()); }
  int n_actions() const noexcept { return static_cast<int>(table_.cols()); }
  double operator()(int s, int a) const { return table_(s, a); }

  bool operator==(const Policy& other) const { return table_ == other.table_; }

 private:
  Matrix table_;
};

class Mdp {
 public:
  /// kernel row s * n_actions + a holds P(. | s, a).
  Mdp(int n_states, int n_actions, Matrix kernel, RewardTable reward, double reward_bound = 1.0);

  int n_states() const noexcept { return n_states_; }
  int n_actions() const noexcept { return n_actions_; }
  const Matrix& kernel() const noexcept { return kernel_; }
  const RewardTable& reward() const noexcept { return reward_; }
  double reward_bound() const noexcept { return reward_bound_; }

  double prob(int s, int a, int next) const { return kernel_(s * n_actions_ + a, next); }
  auto row(int s, int a) const { return kernel_.row(s * n_actions_ + a); }

  /// Same dynamics, different reward table (bounds are re-checked).
  Mdp with_reward(RewardTable reward) const;

 private:
  int n_states_;
  int n_actions_;
  Matrix kernel_;
  RewardTable reward_;
  double reward_bound_;
};

struct StationaryDistribution {
  Vector mu;
  double residual = 0.0;  // ||P mu - mu||_inf
  int iterations = 0;
};

/// mu_hat(s, a), |S| x |A|.
struct OccupancyMeasure {
  Matrix table;
};

/// Column-stochastic P^pi with entry (s', s).
Matrix transition_matrix(const Mdp& mdp, const Policy& pi);

inline constexpr double kStationaryTol = 1e-12;
inline constexpr int kStationaryMaxIter = 1'000'000;

/// Power iteration. Throws NonConvergence past the iteration cap.
StationaryDistribution stationary_distribution(const Matrix& P, double tol = kStationaryTol,
                                               int max_iter = kStationaryMaxIter);

OccupancyMeasure occupancy(const Mdp& mdp, const Policy& pi);

/// Throws ZeroStateMass on an empty state marginal.
Policy policy_from_occupancy(const OccupancyMeasure& mu_hat);

double average_reward(const Mdp& mdp, const Policy& pi);
double average_reward(const Mdp& mdp, const Policy& pi, const RewardTable& reward);
double average_reward(const OccupancyMeasure& mu_hat, const RewardTable& reward);

/// max_s' |sum_a mu(s',a) - sum_{s,a} P(s'|s,a) mu(s,a)|.
double flow_balance_residual(const Mdp& mdp, const OccupancyMeasure& mu_hat);

struct ErgodicityCertificate {
  bool ergodic = true;
  std::vector<int> witness;  // failing deterministic selection, empty when ergodic
  std::string reason;        // "reducible" or "periodic"
  std::size_t policies_checked = 0;
};

inline constexpr std::size_t kEnumerationCap = 100000;

ErgodicityCertificate check_ergodicity(const Mdp& mdp, std::size_t cap = kEnumerationCap);

/// All |A|^|S| action selections, lexicographic with state 0 most significant.
std::vector<std::vector<int>> enumerate_action_selections(int n_states, int n_actions,
                                                          std::size_t cap = kEnumerationCap);
std::vector<Policy> enumerate_deterministic_policies(const Mdp& mdp,
                                                     std::size_t cap = kEnumerationCap);

/// Dirichlet(concentration) kernel rows, Uniform[0,1] rewards.
Mdp random_ergodic_mdp(std::uint64_t seed, int n_states, int n_actions,
                       double concentration = 1.0);

/// Restart mixture: gamma P(.|s,a) + (1 - gamma) restart.
Mdp discounted_to_average(const Mdp& mdp, double gamma, const Vector& restart);

Json to_json(const Mdp& mdp);
Mdp mdp_from_json(const Json& j);
Json to_json(const Policy& pi);

}  // namespace rlconn
