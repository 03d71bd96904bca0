#pragma once

// Reward poisoning toward a target policy, the set of rewards that the
// attack maps to one anchor, and the max-min / min-max values over that set.

#include <cstdint>
#include <vector>

#include "rlconn/mdp.hpp"
#include "rlconn/neural_paths.hpp"

namespace rlconn {

/// Reward tables are flattened row-major: index s * |A| + a.
Vector flatten(const Matrix& table);
Matrix unflatten(const Vector& v, int n_states, int n_actions);

struct AttackSpec {
  std::vector<int> target;  // action per state
  double margin = 0.1;
  double reward_bound = 1.0;

  /// Throws InvalidInput for a negative margin or out-of-range actions.
  void validate(int n_states, int n_actions) const;
  Policy target_policy(int n_actions) const;
};

/// Constraint gradients g_i = occ(target) - occ(pi_i), one column per
/// deterministic competitor pi_i != target.
struct AttackGeometry {
  Matrix gradients;
  std::vector<std::vector<int>> competitors;
  std::vector<Vector> occupancies;  // every deterministic policy, target included
};

AttackGeometry attack_geometry(const Mdp& mdp, const AttackSpec& spec,
                               std::size_t cap = kEnumerationCap);

struct KktResiduals {
  double stationarity = 0.0;   // ||(r_dagger - r) - G lambda||_inf
  double primal = 0.0;         // max(0, margin - min_i g_i^T r_dagger)
  double dual = 0.0;           // max(0, -min lambda)
  double complementarity = 0.0;  // max_i |lambda_i (g_i^T r_dagger - margin)|
};

inline constexpr double kActivityTol = 1e-7;

struct AttackResult {
  RewardTable reward;                // r_dagger
  Vector multipliers;                // one per competitor, zero off the active set
  std::vector<std::size_t> active;   // competitors with g_i^T r_dagger - margin <= kActivityTol
  KktResiduals kkt;
  double min_margin = 0.0;           // min_i g_i^T r_dagger
};

/// Closest reward (Euclidean) under which the target beats every other
/// deterministic policy by at least the margin. r_dagger = r + G lambda.
/// Throws Infeasible or CapExceeded.
AttackResult attack(const Mdp& mdp, const RewardTable& reward, const AttackSpec& spec,
                    std::size_t cap = kEnumerationCap);
AttackResult attack(const Mdp& mdp, const AttackSpec& spec, std::size_t cap = kEnumerationCap);

/// {anchor - G lambda : lambda >= 0} intersected with [0, reward_bound].
struct RewardRegion {
  RewardTable anchor;
  Matrix generators;  // flattened, one column per active competitor
  std::vector<std::vector<int>> active_competitors;
  double reward_bound = 1.0;
  int n_states = 0;
  int n_actions = 0;
};

/// Throws AnchorInvalid unless attacking the anchor itself returns it.
RewardRegion region_from_anchor(const Mdp& mdp, const AttackSpec& spec, const RewardTable& anchor,
                                std::size_t cap = kEnumerationCap);

bool region_membership(const RewardRegion& region, const RewardTable& reward, double tol = 1e-7);

struct InnerMin {
  double value = 0.0;
  RewardTable witness;
};

/// min over the region of occ^T r'. Throws LpFailure (also for an empty region).
InnerMin region_min(const RewardRegion& region, const OccupancyMeasure& occ);

struct MaxminOptions {
  bool cross_check = true;
  double tolerance = 1e-5;
  int max_iter = 100000;
};

struct MaxminResult {
  double value = 0.0;
  OccupancyMeasure occupancy;
  Policy policy = Policy::uniform(1, 1);
  RewardTable witness;
  // extragradient cross-check; NaN when skipped
  double iterative_value = 0.0;
  double iterative_gap = 0.0;
  int iterations = 0;
};

/// max over occupancy measures of min over the region. Throws LpFailure or
/// CrossCheckMismatch.
MaxminResult maxmin_value(const Mdp& mdp, const RewardRegion& region, const MaxminOptions& options = {});

struct MinmaxResult {
  double value = 0.0;
  RewardTable witness;
  std::vector<int> best_response;
};

/// min over the region of max over deterministic policies. Throws LpFailure or CapExceeded.
MinmaxResult minmax_value(const Mdp& mdp, const RewardRegion& region, std::size_t cap = kEnumerationCap);

struct MinimaxReport {
  AttackResult attack;
  RewardRegion region;
  MaxminResult maxmin;
  MinmaxResult minmax;
  double gap = 0.0;  // minmax - maxmin
};

MinimaxReport minimax_gap(const Mdp& mdp, const AttackSpec& spec, const MaxminOptions& options = {});

struct NnMinimaxReport {
  MinimaxReport tabular;
  Theta theta;             // network realizing the smoothed equilibrium policy
  double nn_maxmin = 0.0;  // inner min for that network
  double floor_loss = 0.0; // tabular maxmin - nn_maxmin
  double nn_gap = 0.0;     // minmax - nn_maxmin
  double baseline = 0.0;   // inner min for the all-zero network
};

/// Requires the network assumptions and rank(X) = |S|. The later layers of
/// the realizing network are drawn from random_theta(arch, seed).
NnMinimaxReport nn_minimax_gap(const Mdp& mdp, const NetArchitecture& arch, const Matrix& X,
                               const AttackSpec& spec, std::uint64_t seed = 0, double floor = 1e-9,
                               const MaxminOptions& options = {});

Json to_json(const AttackResult& result);
Json to_json(const MinimaxReport& report);

}  // namespace rlconn
