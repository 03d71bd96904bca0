#pragma once

// Continuous paths in network parameter space. Output-preserving moves are
// built from pseudo-inverse layer inversion; the only value-changing move is
// the tabular lift, which reuses the occupancy-weighted policy path.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rlconn/neural_policy.hpp"
#include "rlconn/path_trace.hpp"

namespace rlconn {

// ---------------------------------------------------------------------------
// Layer inversion

/// First-layer parameters (W, b) of a sub-network with input M such that the
/// sub-network made of (W, b) followed by `above` outputs pi on M.
/// Throws NonPositivePolicy or RankDeficient (message names the matrix).
Layer h_map(const Matrix& M, std::span<const Layer> above, const Matrix& pi, double beta);

/// Rebuilds layer 1 from X so the network outputs pi exactly.
/// rest holds layers 2..L. Throws PolicyFloorViolated for entries below floor.
Theta realize_policy(const NetArchitecture& arch, const Matrix& X, std::span<const Layer> rest,
                     const Policy& pi, double floor = 1e-12);

/// (1 - |A| eps) pi + eps: every entry at least eps.
Policy smooth_policy(const Policy& pi, double eps);

// ---------------------------------------------------------------------------
// Segments

enum class SegmentKind {
  WeightFullrankRepair,
  RankRestoreFirstLayer,
  FirstLayerSwap,
  PreimageChain,
  WeightSwapWithH,
  TabularLift,
};

std::string_view to_string(SegmentKind kind);

enum class SegmentInvariant {
  OutputConstant,  // policy table constant along the segment
  ValueBound,      // J >= min of the endpoint values
};

/// A continuous curve in parameter space on [0, 1]. at(0) and at(1) return
/// the stored endpoints bit for bit.
class PathSegment {
 public:
  PathSegment(SegmentKind kind, SegmentInvariant invariant, Theta start, Theta end,
              std::function<Theta(double)> curve);

  /// A constant segment at theta.
  static PathSegment constant(SegmentKind kind, const Theta& theta);

  Theta at(double alpha) const;
  const Theta& start() const noexcept { return *start_; }
  const Theta& end() const noexcept { return *end_; }
  SegmentKind kind() const noexcept { return kind_; }
  SegmentInvariant invariant() const noexcept { return invariant_; }
  bool is_constant() const noexcept { return !curve_; }

  /// The same curve traversed backwards.
  PathSegment reversed() const;

 private:
  SegmentKind kind_;
  SegmentInvariant invariant_;
  std::shared_ptr<const Theta> start_;
  std::shared_ptr<const Theta> end_;
  std::function<Theta(double)> curve_;
};

/// Maximum output drift of a segment over a grid, relative to its start.
double max_output_drift(const NetArchitecture& arch, const Matrix& X, const PathSegment& seg,
                        const std::vector<double>& grid);

/// theta_a and theta_b share every layer except `varying` (0-based) and give
/// the same policy. Layers above `varying` must have full column rank and
/// [M, 1] full row rank, M being the input of layer `varying`.
/// Throws OutputDrift if the drift on `grid` exceeds tol.
PathSegment preimage_chain_path(const NetArchitecture& arch, const Matrix& X, int varying,
                                const Theta& theta_a, const Theta& theta_b,
                                const std::vector<double>& grid, double tol = 1e-7);

/// W_l + t N C on every rank-deficient layer l >= first_layer (1-based),
/// N spanning ker(F_{l-1}). Logits stay fixed.
/// Throws RepairUnavailable when the kernel is too small.
PathSegment weight_fullrank_repair(const NetArchitecture& arch, const Matrix& X, const Theta& theta,
                                   std::uint64_t seed, int first_layer = 2);

// ---------------------------------------------------------------------------
// First-layer moves at the level of (W, b, V) with V the next layer's weight.

struct FirstLayerBlock {
  Matrix W;
  Vector b;
  Matrix V;
};

/// leaky_relu(X W + 1 b^T)
Matrix block_activation(const Matrix& X, const Matrix& W, const Vector& b, double beta);
/// leaky_relu(X W + 1 b^T) V
Matrix block_product(const Matrix& X, const FirstLayerBlock& block, double beta);

/// Piecewise-linear curve through keyframes, spread evenly on [0, 1].
class BlockPath {
 public:
  explicit BlockPath(std::vector<FirstLayerBlock> keyframes);
  FirstLayerBlock at(double alpha) const;
  const std::vector<FirstLayerBlock>& keyframes() const noexcept { return keyframes_; }

 private:
  std::vector<FirstLayerBlock> keyframes_;
};

/// Raises the rank of the first-layer activation to |S| while keeping the
/// product constant. Throws RestorationStalled after max_tries failed rewires.
BlockPath rank_restore_first_layer(const Matrix& X, const FirstLayerBlock& start, double beta,
                                   std::uint64_t seed, int max_tries = 50);

/// Moves the first layer to (W_target, b_target) keeping the product constant.
/// Both activations must have rank |S|. Throws RankDeficient or SwapFailed.
BlockPath first_layer_swap(const Matrix& X, const FirstLayerBlock& start, const Matrix& W_target,
                           const Vector& b_target, double beta, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Tall full-rank matrices

/// Polar-factor path F(t) = Q(t) P(t): the SPD factor P moves linearly and
/// the orthonormal factor is carried by a one-parameter rotation of R^m, so
/// Q(t) stays orthonormal and F(t) keeps full column rank throughout.
class MatrixPath {
 public:
  /// Rotation by angle * t in the plane of basis columns i and j.
  struct Plane {
    Eigen::Index i = 0;
    Eigen::Index j = 0;
    double angle = 0.0;
  };

  MatrixPath(Matrix start, Matrix end, Matrix basis, Matrix coords, std::vector<Plane> planes,
             Matrix spd_start, Matrix spd_end);
  Matrix at(double t) const;
  const std::vector<Plane>& planes() const noexcept { return planes_; }
  const Matrix& start() const noexcept { return start_; }
  const Matrix& end() const noexcept { return end_; }

 private:
  Matrix raw(double t) const;

  Matrix start_;
  Matrix end_;
  Matrix basis_;   // m x m orthogonal
  Matrix coords_;  // start frame in basis coordinates
  std::vector<Plane> planes_;
  Matrix spd_start_;
  Matrix spd_end_;
  Matrix fix_start_;  // rounding residue at t = 0, faded out linearly
  Matrix fix_end_;
};

/// Requires m > n and both endpoints with smallest singular value at least
/// min_singular. Throws PathStalled if a sample on `grid` falls below it.
MatrixPath fullrank_tall_path(const Matrix& F_a, const Matrix& F_b, const std::vector<double>& grid,
                              double min_singular = 1e-9);

// ---------------------------------------------------------------------------
// Assembled paths

class SegmentedPath {
 public:
  explicit SegmentedPath(std::vector<PathSegment> segments);
  /// Global alpha in [0, 1], split evenly across segments.
  Theta at(double alpha) const;
  const std::vector<PathSegment>& segments() const noexcept { return segments_; }
  const Theta& start() const { return segments_.front().start(); }
  const Theta& end() const { return segments_.back().end(); }

 private:
  std::vector<PathSegment> segments_;
};

struct NnPathOptions {
  std::vector<double> grid = uniform_grid(101);  // per segment
  int max_refine_depth = 8;
  double refine_fraction = 0.05;
  double value_tol = 1e-6;
  double drift_tol = 1e-6;
  std::uint64_t seed = 0;
};

struct SegmentReport {
  SegmentKind kind;
  std::string side;  // "start", "bridge" or "end"
  SegmentInvariant invariant;
  std::size_t samples = 0;
  double max_output_drift = 0.0;  // output-preserving segments
  double max_lift_error = 0.0;    // tabular lift: realized vs prescribed policy
  double max_param_step = 0.0;
};

struct NnPathResult {
  SegmentedPath path;
  /// Global samples; values per reward; residual curves "output_drift",
  /// "lift_error", "value_deficit", "param_step".
  PathTrace<Theta> trace;
  std::vector<std::size_t> sample_segment;
  std::vector<SegmentReport> segments;
  std::vector<double> bounds;  // min of the endpoint values, per reward
  bool certified = false;
  std::string failure;  // first certificate failure, empty when certified
};

/// Route through a full-rank first layer (needs at least two layers).
NnPathResult assemble_nn_path(const Mdp& mdp, const NetArchitecture& arch, const Matrix& X,
                              const Theta& theta_1, const Theta& theta_2,
                              const std::vector<RewardTable>& rewards,
                              const NnPathOptions& options = {});

/// Route for feature tables of rank |S|: layer 1 is the inverted layer.
NnPathResult assemble_direct_path(const Mdp& mdp, const NetArchitecture& arch, const Matrix& X,
                                  const Theta& theta_1, const Theta& theta_2,
                                  const std::vector<RewardTable>& rewards,
                                  const NnPathOptions& options = {});

Json path_manifest(const NnPathResult& result);

}  // namespace rlconn
