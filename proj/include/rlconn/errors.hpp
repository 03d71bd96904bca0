#pragma once

#include <stdexcept>
#include <string>

namespace rlconn {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define RLCONN_DEFINE_ERROR(Name)              \
  class Name : public Error {                  \
   public:                                     \
    explicit Name(const std::string& what)     \
        : Error(#Name ": " + what) {}          \
  }

// Malformed inputs (shapes, probability tables, parameter ranges).
RLCONN_DEFINE_ERROR(InvalidInput);
RLCONN_DEFINE_ERROR(ShapeMismatch);

// mdp_core
RLCONN_DEFINE_ERROR(NonConvergence);
RLCONN_DEFINE_ERROR(ZeroStateMass);
RLCONN_DEFINE_ERROR(CapExceeded);

// neural_policy / neural_paths
RLCONN_DEFINE_ERROR(NonPositiveEntry);
RLCONN_DEFINE_ERROR(RankDeficient);
RLCONN_DEFINE_ERROR(NonPositivePolicy);
RLCONN_DEFINE_ERROR(PolicyFloorViolated);
RLCONN_DEFINE_ERROR(OutputDrift);
RLCONN_DEFINE_ERROR(RestorationStalled);
RLCONN_DEFINE_ERROR(SwapFailed);
RLCONN_DEFINE_ERROR(PathStalled);
RLCONN_DEFINE_ERROR(RepairUnavailable);

// attack_defense
RLCONN_DEFINE_ERROR(Infeasible);
RLCONN_DEFINE_ERROR(AnchorInvalid);
RLCONN_DEFINE_ERROR(LpFailure);
RLCONN_DEFINE_ERROR(CrossCheckMismatch);

// numerics
RLCONN_DEFINE_ERROR(IterationCap);
RLCONN_DEFINE_ERROR(Unbounded);
RLCONN_DEFINE_ERROR(Cycling);

// landscape
RLCONN_DEFINE_ERROR(OutOfDomain);

#undef RLCONN_DEFINE_ERROR

/// Raised when a certified lower bound J(path(alpha)) >= bound - tol fails.
/// Carries the offending reward index and path parameter.
class BoundViolated : public Error {
 public:
  BoundViolated(std::size_t reward_index, double alpha, double value, double bound)
      : Error("BoundViolated: reward " + std::to_string(reward_index) + " at alpha=" +
              std::to_string(alpha) + " value " + std::to_string(value) + " < bound " +
              std::to_string(bound)),
        reward_index_(reward_index),
        alpha_(alpha),
        value_(value),
        bound_(bound) {}

  std::size_t reward_index() const noexcept { return reward_index_; }
  double alpha() const noexcept { return alpha_; }
  double value() const noexcept { return value_; }
  double bound() const noexcept { return bound_; }

 private:
  std::size_t reward_index_;
  double alpha_;
  double value_;
  double bound_;
};

/// A path segment could not be built; carries the segment kind and which
/// endpoint side was being processed.
class SegmentFailure : public Error {
 public:
  SegmentFailure(std::string kind, std::string side, const std::string& cause)
      : Error("SegmentFailure: segment " + kind + " (" + side + "): " + cause),
        kind_(std::move(kind)),
        side_(std::move(side)) {}

  const std::string& kind() const noexcept { return kind_; }
  const std::string& side() const noexcept { return side_; }

 private:
  std::string kind_;
  std::string side_;
};

}  // namespace rlconn
