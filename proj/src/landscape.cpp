#include "rlconn/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "rlconn/errors.hpp"

namespace rlconn {

namespace {

constexpr Rect kFDomain{-4.0, 4.0, -2.0, 0.0};

void require_f_domain(double x, double y) {
  if (!kFDomain.contains(x, y)) {
    std::ostringstream msg;
    msg << "(" << x << ", " << y << ") outside [-4, 4] x [-2, 0]";
    throw OutOfDomain(msg.str());
  }
}

// The y part shared by both pieces.
double f_common(double x, double y) {
  return -y * y - 2.0 * y - 0.02 * (y + 10.0) * (y + 10.0) * (10.0 - x * x);
}

double f_common_dy(double x, double y) { return -2.0 * y - 2.0 - 0.04 * (y + 10.0) * (10.0 - x * x); }

double cube(double v) { return v * v * v; }

/// Flood fill of the mask, returning labels and the number of components.
std::pair<Eigen::MatrixXi, int> label_components(const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& mask) {
  const Eigen::Index rows = mask.rows(), cols = mask.cols();
  Eigen::MatrixXi labels = Eigen::MatrixXi::Zero(rows, cols);
  int count = 0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> stack;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!mask(i, j) || labels(i, j) != 0) continue;
      const int label = ++count;
      labels(i, j) = label;
      stack.assign(1, {i, j});
      while (!stack.empty()) {
        const auto [r, c] = stack.back();
        stack.pop_back();
        const std::pair<Eigen::Index, Eigen::Index> nbrs[4] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
        for (const auto& [nr, nc] : nbrs) {
          if (nr < 0 || nc < 0 || nr >= rows || nc >= cols) continue;
          if (!mask(nr, nc) || labels(nr, nc) != 0) continue;
          labels(nr, nc) = label;
          stack.push_back({nr, nc});
        }
      }
    }
  return {std::move(labels), count};
}

Eigen::MatrixXd sample_grid(const ScalarField2D& field, int resolution) {
  const Rect& d = field.domain();
  Eigen::MatrixXd values(resolution, resolution);
  for (int i = 0; i < resolution; ++i) {
    const double y = d.y_min + (d.y_max - d.y_min) * i / (resolution - 1);
    for (int j = 0; j < resolution; ++j) {
      const double x = d.x_min + (d.x_max - d.x_min) * j / (resolution - 1);
      values(i, j) = field.value(x, y);
    }
  }
  return values;
}

PointKind classify(const Eigen::Matrix2d& H) {
  const Eigen::Vector2d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(H).eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  const double tol = 1e-6 * scale;
  const bool has_pos = ev.maxCoeff() > tol, has_neg = ev.minCoeff() < -tol;
  if (has_pos && has_neg) return PointKind::Saddle;
  if (has_neg) return PointKind::Maximum;  // possibly non-strict along a flat direction
  if (has_pos) return PointKind::Minimum;
  return PointKind::Degenerate;
}

}  // namespace

ScalarField2D::ScalarField2D(std::string name, Rect domain, ValueFn value, GradFn gradient,
                             std::vector<Rect> pieces)
    : name_(std::move(name)),
      domain_(domain),
      value_(std::move(value)),
      gradient_(std::move(gradient)),
      pieces_(std::move(pieces)) {
  if (!(domain_.x_min < domain_.x_max && domain_.y_min < domain_.y_max))
    throw InvalidInput("empty field domain");
  if (!value_ || !gradient_) throw InvalidInput("field needs a value and a gradient");
  if (pieces_.empty()) pieces_.push_back(domain_);
}

Eigen::Matrix2d ScalarField2D::hessian(double x, double y, double h) const {
  // One-sided at the domain edges so evaluation never leaves the domain.
  auto column = [&](int axis) {
    const double c = axis == 0 ? x : y;
    const double lo = axis == 0 ? domain_.x_min : domain_.y_min;
    const double hi = axis == 0 ? domain_.x_max : domain_.y_max;
    const double a = std::max(lo, c - h), b = std::min(hi, c + h);
    const Point2 ga = axis == 0 ? gradient_(a, y) : gradient_(x, a);
    const Point2 gb = axis == 0 ? gradient_(b, y) : gradient_(x, b);
    return Point2((gb - ga) / (b - a));
  };
  Eigen::Matrix2d H;
  H.col(0) = column(0);
  H.col(1) = column(1);
  return 0.5 * (H + H.transpose());
}

double f_right(double x, double y) {
  require_f_domain(x, y);
  return -cube(x - 1.0) + 3.0 * (x - 1.0) + f_common(x, y);
}

double f_left(double x, double y) {
  require_f_domain(x, y);
  return -cube(-x - 1.0) + 3.0 * (-x - 1.0) + f_common(x, y);
}

double f_right_dx(double x, double y) {
  require_f_domain(x, y);
  return -3.0 * (x - 1.0) * (x - 1.0) + 3.0 + 0.04 * x * (y + 10.0) * (y + 10.0);
}

double f_left_dx(double x, double y) {
  require_f_domain(x, y);
  return 3.0 * (x + 1.0) * (x + 1.0) - 3.0 + 0.04 * x * (y + 10.0) * (y + 10.0);
}

double f_value(double x, double y) { return x >= 0.0 ? f_right(x, y) : f_left(x, y); }

Point2 f_gradient(double x, double y) {
  const double dx = x >= 0.0 ? f_right_dx(x, y) : f_left_dx(x, y);
  return {dx, f_common_dy(x, y)};
}

ScalarField2D field_f() {
  return ScalarField2D("f", kFDomain, f_value, f_gradient,
                       {Rect{0.0, 4.0, -2.0, 0.0}, Rect{-4.0, 0.0, -2.0, 0.0}});
}

double g_value(double x, double y) {
  const double t = x * x + y * y;
  return -t * t + 4.0 * t;
}

Point2 g_gradient(double x, double y) {
  const double t = x * x + y * y;
  const double k = -4.0 * t + 8.0;  // d/dt (-t^2 + 4t) times dt/dx = 2x
  return {k * x, k * y};
}

ScalarField2D field_g(Rect domain) { return ScalarField2D("g", domain, g_value, g_gradient); }

std::string to_string(PointKind kind) {
  switch (kind) {
    case PointKind::Maximum: return "max";
    case PointKind::Minimum: return "min";
    case PointKind::Saddle: return "saddle";
    case PointKind::Degenerate: return "degenerate";
  }
  return "degenerate";
}

std::vector<StationaryPoint> find_stationary_points(const ScalarField2D& field,
                                                    const StationaryOptions& options) {
  if (options.seeds_per_axis < 2) throw InvalidInput("need at least 2 seeds per axis");
  if (!(options.tol > 0.0)) throw InvalidInput("tolerance must be positive");
  std::vector<StationaryPoint> found;
  for (const Rect& piece : field.pieces()) {
    for (int i = 0; i < options.seeds_per_axis; ++i)
      for (int j = 0; j < options.seeds_per_axis; ++j) {
        Point2 p(piece.x_min + (piece.x_max - piece.x_min) * j / (options.seeds_per_axis - 1),
                 piece.y_min + (piece.y_max - piece.y_min) * i / (options.seeds_per_axis - 1));
        Point2 grad = field.gradient(p.x(), p.y());
        bool ok = false;
        for (int it = 0; it < options.max_iter; ++it) {
          if (grad.lpNorm<Eigen::Infinity>() <= options.tol) {
            ok = true;
            break;
          }
          const Eigen::Matrix2d H = field.hessian(p.x(), p.y());
          const Point2 step = H.completeOrthogonalDecomposition().solve(-grad);
          if (!step.allFinite()) break;
          // Halve until the gradient norm decreases or the step is negligible.
          double scale = 1.0;
          Point2 next = p + step;
          bool moved = false;
          for (int k = 0; k < 30; ++k, scale *= 0.5) {
            next = p + scale * step;
            if (!piece.contains(next.x(), next.y())) continue;
            if (field.gradient(next.x(), next.y()).norm() < grad.norm()) {
              moved = true;
              break;
            }
          }
          if (!moved) break;
          p = next;
          grad = field.gradient(p.x(), p.y());
        }
        if (!ok) continue;
        const bool dup = std::any_of(found.begin(), found.end(), [&](const StationaryPoint& q) {
          return std::hypot(q.x - p.x(), q.y - p.y()) < options.dedup_radius;
        });
        if (dup) continue;
        StationaryPoint sp;
        sp.x = p.x();
        sp.y = p.y();
        sp.value = field.value(p.x(), p.y());
        sp.grad_norm = grad.lpNorm<Eigen::Infinity>();
        sp.kind = classify(field.hessian(p.x(), p.y()));
        found.push_back(sp);
      }
  }
  std::sort(found.begin(), found.end(), [](const StationaryPoint& a, const StationaryPoint& b) {
    return a.x != b.x ? a.x < b.x : a.y < b.y;
  });
  return found;
}

ComponentScan superlevel_components(const ScalarField2D& field, double level, int resolution) {
  if (resolution < 64) throw InvalidInput("resolution must be at least 64");
  const Eigen::MatrixXd values = sample_grid(field, resolution);
  constexpr double kNudge = 1e-6;
  auto count_at = [&](double lvl) {
    return label_components((values.array() >= lvl).matrix());
  };
  ComponentScan scan;
  scan.resolution = resolution;
  scan.level = level;
  auto [labels, count] = count_at(level);
  scan.labels = std::move(labels);
  scan.count = count;
  const bool near_level = ((values.array() - level).abs() <= kNudge).any();
  if (near_level) {
    const int below = count_at(level - kNudge).second;
    const int above = count_at(level + kNudge).second;
    scan.ambiguous = below != count || above != count;
  }
  return scan;
}

void write_heatmap_csv(const ScalarField2D& field, int resolution, std::ostream& out) {
  if (resolution < 2) throw InvalidInput("resolution must be at least 2");
  const Eigen::MatrixXd values = sample_grid(field, resolution);
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      if (j) out << ',';
      out << format_double(values(i, j));
    }
    out << '\n';
  }
}

Json census_to_json(const std::vector<StationaryPoint>& points,
                    const std::map<std::string, int>& components) {
  Json j;
  j["points"] = Json::array();
  for (const auto& p : points)
    j["points"].push_back(Json{{"x", p.x}, {"y", p.y}, {"class", to_string(p.kind)}, {"grad_norm", p.grad_norm},
                               {"value", p.value}});
  j["components"] = Json::object();
  for (const auto& [level, count] : components) j["components"][level] = count;
  return j;
}

}  // namespace rlconn
