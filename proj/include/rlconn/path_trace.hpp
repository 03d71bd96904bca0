#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rlconn/serialize.hpp"

namespace rlconn {

/// A sampled continuous path with per-sample value curves and residuals.
template <class Point>
struct PathTrace {
  std::vector<double> alphas;
  std::vector<Point> points;
  /// values[k][i]: value of reward k at alphas[i].
  std::vector<std::vector<double>> values;
  /// Named residual curves, kept in insertion order.
  std::vector<std::pair<std::string, std::vector<double>>> residuals;

  std::vector<double>& residual(const std::string& name) {
    for (auto& [key, curve] : residuals)
      if (key == name) return curve;
    residuals.emplace_back(name, std::vector<double>{});
    return residuals.back().second;
  }

  double max_residual(const std::string& name) const {
    double out = 0.0;
    for (const auto& [key, curve] : residuals)
      if (key == name)
        for (double v : curve) out = std::max(out, v);
    return out;
  }
};

/// Uniform grid of n >= 2 points on [0, 1] with exact endpoints.
std::vector<double> uniform_grid(int n);

/// Sorted, deduplicated, contains 0 and 1, all inside [0, 1]. Throws InvalidInput.
void validate_grid(const std::vector<double>& grid);

/// CSV with columns alpha, value_<k>..., <residual names>...
template <class Point>
std::string trace_to_csv(const PathTrace<Point>& trace) {
  std::string out = "alpha";
  for (std::size_t k = 0; k < trace.values.size(); ++k) out += ",value_" + std::to_string(k);
  for (const auto& [name, curve] : trace.residuals) out += "," + name;
  out += "\n";
  for (std::size_t i = 0; i < trace.alphas.size(); ++i) {
    out += format_double(trace.alphas[i]);
    for (const auto& curve : trace.values) out += "," + format_double(curve[i]);
    for (const auto& [name, curve] : trace.residuals)
      out += "," + (i < curve.size() ? format_double(curve[i]) : std::string());
    out += "\n";
  }
  return out;
}

/// JSON report; point serialization is opt-in since snapshots can be large.
template <class Point, class PointToJson>
Json trace_to_json(const PathTrace<Point>& trace, PointToJson&& point_to_json,
                   bool include_points) {
  Json j;
  j["alphas"] = trace.alphas;
  j["values"] = trace.values;
  Json res = Json::object();
  for (const auto& [name, curve] : trace.residuals) res[name] = curve;
  j["residuals"] = std::move(res);
  if (include_points) {
    Json pts = Json::array();
    for (const auto& p : trace.points) pts.push_back(point_to_json(p));
    j["points"] = std::move(pts);
  }
  return j;
}

}  // namespace rlconn
