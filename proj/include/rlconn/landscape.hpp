#pragma once

// Two planar test fields: one whose only stationary points are global maxima
// but whose maximizers are disconnected, and a volcano with connected
// superlevel sets and a stationary point at its crater floor.

#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rlconn/serialize.hpp"

namespace rlconn {

using Point2 = Eigen::Vector2d;

struct Rect {
  double x_min = 0.0;
  double x_max = 0.0;
  double y_min = 0.0;
  double y_max = 0.0;

  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
};

/// A smooth field on a rectangle. `pieces` lists sub-rectangles on which the
/// field is given by one smooth formula; Newton seeds are laid out per piece.
class ScalarField2D {
 public:
  using ValueFn = std::function<double(double, double)>;
  using GradFn = std::function<Point2(double, double)>;

  ScalarField2D(std::string name, Rect domain, ValueFn value, GradFn gradient,
                std::vector<Rect> pieces = {});

  const std::string& name() const { return name_; }
  const Rect& domain() const { return domain_; }
  const std::vector<Rect>& pieces() const { return pieces_; }

  double value(double x, double y) const { return value_(x, y); }
  Point2 gradient(double x, double y) const { return gradient_(x, y); }

  /// Central differences of the analytic gradient, symmetrized.
  Eigen::Matrix2d hessian(double x, double y, double h = 1e-5) const;

 private:
  std::string name_;
  Rect domain_;
  ValueFn value_;
  GradFn gradient_;
  std::vector<Rect> pieces_;
};

// The piecewise field on [-4, 4] x [-2, 0]. The right piece is used for
// x >= 0, its mirror image otherwise. Evaluators throw OutOfDomain.
double f_right(double x, double y);
double f_left(double x, double y);
double f_right_dx(double x, double y);
double f_left_dx(double x, double y);
double f_value(double x, double y);
Point2 f_gradient(double x, double y);
ScalarField2D field_f();

// The volcano -(x^2 + y^2)^2 + 4 (x^2 + y^2), defined everywhere.
double g_value(double x, double y);
Point2 g_gradient(double x, double y);
ScalarField2D field_g(Rect domain = {-3.0, 3.0, -3.0, 3.0});

enum class PointKind { Maximum, Minimum, Saddle, Degenerate };
std::string to_string(PointKind kind);

struct StationaryPoint {
  double x = 0.0;
  double y = 0.0;
  double value = 0.0;
  double grad_norm = 0.0;  // infinity norm
  PointKind kind = PointKind::Degenerate;
};

struct StationaryOptions {
  int seeds_per_axis = 25;
  double tol = 1e-8;
  int max_iter = 200;
  double dedup_radius = 1e-4;
};

/// Damped Newton from a seed grid on each piece; points that leave their
/// piece or fail to reach tol are dropped. Sorted by (x, y).
std::vector<StationaryPoint> find_stationary_points(const ScalarField2D& field,
                                                    const StationaryOptions& options = {});

struct ComponentScan {
  int count = 0;
  int resolution = 0;
  double level = 0.0;
  Eigen::MatrixXi labels;  // rows index y, cols index x; 0 = below level
  bool ambiguous = false;  // nudged levels gave different counts
};

/// 4-connected components of {value >= level} on a resolution x resolution
/// vertex grid over the field's domain. Requires resolution >= 64.
ComponentScan superlevel_components(const ScalarField2D& field, double level, int resolution);

/// One row per y, one column per x, values formatted for round trip.
void write_heatmap_csv(const ScalarField2D& field, int resolution, std::ostream& out);

Json census_to_json(const std::vector<StationaryPoint>& points,
                    const std::map<std::string, int>& components);

}  // namespace rlconn
