#pragma once

// Softmax policy networks with leaky-ReLU hidden layers, evaluated on the
// whole feature table at once (one row per state).

#include <cstdint>
#include <span>
#include <vector>

#include "rlconn/mdp.hpp"

namespace rlconn {

/// widths = (n_0 = d, n_1, ..., n_L = |A|); beta is the leaky slope.
struct NetArchitecture {
  std::vector<int> widths;
  double beta = 0.01;

  int depth() const { return static_cast<int>(widths.size()) - 1; }
  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  /// Throws InvalidInput for fewer than one layer, non-positive widths or beta outside (0, 1).
  void validate() const;
};

/// One affine layer: input row vectors times W (n_in x n_out) plus b.
struct Layer {
  Matrix W;
  Vector b;

  bool operator==(const Layer& o) const { return W == o.W && b == o.b; }
};

struct Theta {
  std::vector<Layer> layers;

  bool operator==(const Theta& o) const { return layers == o.layers; }
  /// Throws ShapeMismatch unless every layer matches the architecture.
  void check_shapes(const NetArchitecture& arch) const;
  /// Frobenius distance over all weights and biases.
  double distance(const Theta& o) const;
};

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& M);
/// log M minus its row mean; rows of the result sum to zero. Throws NonPositiveEntry.
Matrix softmax_inv_rows(const Matrix& M);

Matrix leaky_relu(const Matrix& x, double beta);
Matrix leaky_relu_inv(const Matrix& y, double beta);

/// [M, 1] with a trailing column of ones.
Matrix with_ones_column(const Matrix& M);

struct ForwardPass {
  std::vector<Matrix> pre;   // pre-activations of every layer; pre.back() are the logits
  std::vector<Matrix> post;  // post.back() is the policy table
};

/// Runs `layers` on input M: leaky-ReLU on all but the last, softmax on the last.
ForwardPass forward_layers(const Matrix& M, std::span<const Layer> layers, double beta);

struct NetworkOutput {
  std::vector<Matrix> layer_outputs;  // F_1 .. F_L
  Matrix logits;                      // pre-softmax output
  Policy policy;
};

NetworkOutput forward(const NetArchitecture& arch, const Theta& theta, const Matrix& X);

struct AssumptionReport {
  bool first_layer_wide = false;      // n_1 >= 2|S|
  bool strictly_decreasing = false;   // n_1 > n_2 > ... > n_L
  bool output_matches_actions = false;
  bool input_matches_features = false;
  bool distinct_features = false;
  bool features_full_row_rank = false;  // informational, needed by the direct route only

  bool passed() const {
    return first_layer_wide && strictly_decreasing && output_matches_actions &&
           input_matches_features && distinct_features;
  }
};

AssumptionReport check_assumptions(const NetArchitecture& arch, const Matrix& X, int n_actions);

double value_of_theta(const Mdp& mdp, const NetArchitecture& arch, const Theta& theta,
                      const Matrix& X);
double value_of_theta(const Mdp& mdp, const NetArchitecture& arch, const Theta& theta,
                      const Matrix& X, const RewardTable& reward);

/// One-hot rows padded to width d; for d < |S| rows stay distinct via scaled one-hots.
Matrix default_features(int n_states, int d);

/// Gaussian weights with variance 1/n_in and small Gaussian biases.
Theta random_theta(const NetArchitecture& arch, std::uint64_t seed);

Json to_json(const NetArchitecture& arch);
NetArchitecture architecture_from_json(const Json& j);
Json to_json(const Theta& theta);
Theta theta_from_json(const Json& j);

}  // namespace rlconn
