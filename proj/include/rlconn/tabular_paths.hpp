#pragma once

// Occupancy-weighted interpolation between two tabular policies. Along the
// path the occupancy measure moves linearly, so every average reward moves
// linearly too and never drops below the weaker endpoint.

#include <functional>
#include <vector>

#include "rlconn/mdp.hpp"
#include "rlconn/path_trace.hpp"

namespace rlconn {

/// Precomputes the endpoint stationary distributions once.
/// at(1) is pi1 and at(0) is pi2, bit for bit.
class TabularPath {
 public:
  TabularPath(const Mdp& mdp, Policy pi1, Policy pi2);

  Policy at(double alpha) const;

  const Policy& first() const noexcept { return pi1_; }
  const Policy& second() const noexcept { return pi2_; }
  const Vector& first_stationary() const noexcept { return mu1_; }
  const Vector& second_stationary() const noexcept { return mu2_; }
  /// alpha * mu_hat1 + (1 - alpha) * mu_hat2
  Matrix linear_occupancy(double alpha) const;

 private:
  Policy pi1_;
  Policy pi2_;
  Vector mu1_;
  Vector mu2_;
  Matrix occ1_;
  Matrix occ2_;
};

Policy interpolate_policies(const Mdp& mdp, const Policy& pi1, const Policy& pi2, double alpha);

struct LinearityReport {
  std::vector<double> alphas;
  std::vector<double> residuals;  // ||mu_alpha - (alpha mu1 + (1-alpha) mu2)||_inf
  double max_residual = 0.0;
};

LinearityReport verify_stationary_linearity(const Mdp& mdp, const Policy& pi1, const Policy& pi2,
                                            const std::vector<double>& grid);

struct EquiconnectOptions {
  double tol = 1e-9;
  int max_refine_depth = 8;
  /// An interval is bisected while its occupancy change (l1) exceeds this
  /// fraction of the endpoint occupancy distance.
  double refine_fraction = 0.05;
};

/// One reward-independent path checked against every reward table.
/// Residual curves: "stationary_linearity", "occupancy_linearity".
/// Throws BoundViolated on the first (reward, alpha) that breaks the bound.
PathTrace<Policy> verify_equiconnectedness(const Mdp& mdp, const Policy& pi1, const Policy& pi2,
                                           const std::vector<RewardTable>& rewards,
                                           const std::vector<double>& grid,
                                           const EquiconnectOptions& options = {});

using PolicyPreference = std::function<double(const Policy&)>;

struct PreferredPolicy {
  double alpha;
  Policy policy;
  double value;  // J_r at the selected point
};

/// Maximizes the preference over the sampled path while certifying
/// J_r >= level - 1e-9 at the chosen point.
PreferredPolicy select_preferred_on_path(const Mdp& mdp, const Policy& pi1, const Policy& pi2,
                                         const PolicyPreference& preference,
                                         const std::vector<double>& grid,
                                         const RewardTable& reward, double level);

/// Sum over states of the action entropy.
double policy_entropy(const Policy& pi);

}  // namespace rlconn
