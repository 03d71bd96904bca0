#pragma once

// Batch driver behind the rlconn command-line tool. Runs are pure functions
// of (command, config): the produced files are returned in memory and only
// written by cli_main, so reports can be compared byte for byte.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rlconn/serialize.hpp"

namespace rlconn {

inline const std::vector<std::string> kCommands = {"gen-mdp", "tabular-verify", "nn-verify", "attack",
                                                   "defend",  "minimax",        "landscape"};

struct RunConfig {
  std::string command;
  std::uint64_t seed = 0;
  int instances = 10;
  int states_min = 2;
  int states_max = 6;
  int actions_min = 2;
  int actions_max = 4;
  int rewards = 20;        // reward tables per instance
  int grid = 101;          // alpha grid points (per segment for network paths)
  int refine_depth = 8;
  double value_tol = 1e-9;
  double linearity_tol = 1e-8;
  double drift_tol = 1e-6;
  double kkt_tol = 1e-6;
  double gap_tol = 1e-5;
  double nn_gap_tol = 2e-5;
  double margin = 0.1;
  std::vector<int> architecture;  // empty: chosen per instance size
  double beta = 0.01;
  std::string route = "full-rank";  // or "direct"
  bool network = true;              // minimax also runs the network reduction
  int resolution = 512;
  std::vector<double> f_level_offsets = {0.1, 0.5};
  std::vector<double> g_levels = {0.0, 1.0, 3.0, 3.9};
  std::string mdp_dir;  // read instances written by gen-mdp instead of generating

  /// Subcommand defaults; throws InvalidInput for an unknown command.
  static RunConfig defaults(const std::string& command);
  /// Overrides fields from a JSON object; unknown keys are rejected.
  void merge(const Json& j);
  /// Tolerances positive, sizes within the enumeration cap, ranges ordered.
  void validate() const;
  Json to_json() const;
};

struct RunOutcome {
  int exit_code = 0;      // 0 pass, 2 violation
  std::string message;    // first violation, empty on pass
  std::map<std::string, std::string> files;  // relative name -> content; report.json always present
};

/// Runs one subcommand with `jobs` worker threads. Output does not depend on jobs.
RunOutcome run_command(const RunConfig& config, int jobs = 1);

/// Parses argv, runs, writes files and metadata.json into --out.
/// Returns 0 on pass, 2 on a verification violation, 1 on operational errors.
int cli_main(int argc, char** argv);

}  // namespace rlconn
