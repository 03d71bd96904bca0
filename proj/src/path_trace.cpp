#include "rlconn/path_trace.hpp"

#include "rlconn/errors.hpp"

namespace rlconn {

std::vector<double> uniform_grid(int n) {
  if (n < 2) throw InvalidInput("a grid needs at least two points");
  std::vector<double> g(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = static_cast<double>(i) / (n - 1);
  g.front() = 0.0;
  g.back() = 1.0;
  return g;
}

void validate_grid(const std::vector<double>& grid) {
  if (grid.size() < 2 || grid.front() != 0.0 || grid.back() != 1.0)
    throw InvalidInput("grid must start at 0 and end at 1");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw InvalidInput("grid must be strictly increasing");
}

}  // namespace rlconn
