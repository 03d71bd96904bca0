#include "rlconn/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "rlconn/attack_defense.hpp"
#include "rlconn/errors.hpp"
#include "rlconn/landscape.hpp"
#include "rlconn/neural_paths.hpp"
#include "rlconn/random.hpp"
#include "rlconn/tabular_paths.hpp"

namespace fs = std::filesystem;

namespace rlconn {

namespace {

// Per-instance random streams, all derived from the instance seed.
enum Stream : std::uint64_t {
  kSizeStream = 0,
  kMdpStream = 1,
  kPolicyStream = 2,
  kRewardStream = 3,
  kAltRewardStream = 4,
  kTargetStream = 5,
  kThetaStream1 = 6,
  kThetaStream2 = 7,
  kPathStream = 8,
  kNetworkStream = 9,
};

std::mt19937_64 stream(std::uint64_t instance_seed, Stream k) {
  return std::mt19937_64(derive_seed(instance_seed, k));
}

struct Instance {
  int id;
  std::uint64_t seed;
  Mdp mdp;
  std::string source;  // file name when loaded from disk
};

std::string numbered(const std::string& stem, int id, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04d", id);
  return stem + buf + ext;
}

Policy random_policy(std::mt19937_64& rng, int S, int A) {
  std::exponential_distribution<double> e(1.0);
  Matrix t(S, A);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) t(s, a) = e(rng) + 1e-12;
    t.row(s) /= t.row(s).sum();
  }
  return Policy(t);
}

std::vector<RewardTable> random_rewards(std::mt19937_64& rng, int count, int S, int A, double bound) {
  std::uniform_real_distribution<double> u(0.0, bound);
  std::vector<RewardTable> out;
  for (int k = 0; k < count; ++k) out.push_back(RewardTable::NullaryExpr(S, A, [&] { return u(rng); }));
  return out;
}

Mdp generated_mdp(const RunConfig& c, std::uint64_t seed) {
  auto rng = stream(seed, kSizeStream);
  std::uniform_int_distribution<int> s(c.states_min, c.states_max), a(c.actions_min, c.actions_max);
  const int S = s(rng);
  const int A = a(rng);
  return random_ergodic_mdp(derive_seed(seed, kMdpStream), S, A);
}

std::vector<Instance> load_instances(const RunConfig& c) {
  std::vector<Instance> out;
  if (c.mdp_dir.empty()) {
    for (int id = 0; id < c.instances; ++id) {
      const std::uint64_t seed = derive_seed(c.seed, static_cast<std::uint64_t>(id));
      out.push_back({id, seed, generated_mdp(c, seed), ""});
    }
    return out;
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(c.mdp_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("mdp_", 0) == 0 && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InvalidInput("no mdp_*.json files in " + c.mdp_dir);
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::ifstream in(files[i]);
    if (!in) throw InvalidInput("cannot read " + files[i].string());
    Json j;
    try {
      j = Json::parse(in);
    } catch (const Json::exception& e) {
      throw InvalidInput(files[i].string() + ": " + e.what());
    }
    const int id = static_cast<int>(i);
    out.push_back({id, derive_seed(c.seed, static_cast<std::uint64_t>(id)),
                   mdp_from_json(j.contains("mdp") ? j.at("mdp") : j), files[i].filename().string()});
  }
  return out;
}

Json instance_header(const Instance& inst) {
  Json j;
  j["id"] = inst.id;
  j["seed"] = inst.seed;
  if (!inst.source.empty()) j["source"] = inst.source;
  j["n_states"] = inst.mdp.n_states();
  j["n_actions"] = inst.mdp.n_actions();
  j["violation"] = nullptr;
  return j;
}

/// Runs fn(i) for i < n on `jobs` threads; slot i always holds instance i.
/// Exceptions escaping fn are rethrown after all workers finish, lowest id first.
template <class Fn>
std::vector<Json> run_instances(int n, int jobs, Fn&& fn) {
  std::vector<Json> out(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i; (i = next++) < n;) {
      try {
        out[static_cast<std::size_t>(i)] = fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < std::min(jobs, n); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

/// Wraps an instance body so that library errors are reported as violations.
template <class Body>
Json guarded(const Instance& inst, Body&& body) {
  Json rec = instance_header(inst);
  try {
    body(rec);
  } catch (const SegmentFailure& e) {
    rec["violation"] = Json{{"type", "segment"}, {"kind", e.kind()}, {"side", e.side()}, {"message", e.what()}};
  } catch (const BoundViolated& e) {
    rec["violation"] = Json{{"type", "bound"},       {"reward_index", e.reward_index()}, {"alpha", e.alpha()},
                            {"value", e.value()},    {"bound", e.bound()},               {"message", e.what()}};
  } catch (const Error& e) {
    rec["violation"] = Json{{"type", "error"}, {"message", e.what()}};
  }
  return rec;
}

RunOutcome finish(const RunConfig& c, std::vector<Json> records, Json extra = Json::object()) {
  Json report;
  report["command"] = c.command;
  report["config"] = c.to_json();
  for (auto& [key, value] : extra.items()) report[key] = value;
  int violations = 0;
  Json first = nullptr;
  for (const auto& r : records)
    if (!r["violation"].is_null()) {
      if (violations++ == 0) first = Json{{"id", r["id"]}, {"violation", r["violation"]}};
    }
  report["instances"] = std::move(records);
  report["summary"] = Json{{"instances", report["instances"].size()}, {"violations", violations},
                           {"first_violation", first}};
  RunOutcome out;
  out.exit_code = violations == 0 ? 0 : 2;
  if (violations) out.message = first.dump();
  out.files["report.json"] = report.dump(2) + "\n";
  return out;
}

double min_value_margin(const std::vector<std::vector<double>>& values) {
  double margin = kInf;
  for (const auto& curve : values) {
    const double bound = std::min(curve.front(), curve.back());
    for (double v : curve) margin = std::min(margin, v - bound);
  }
  return margin;
}

// ---------------------------------------------------------------------------

RunOutcome cmd_gen_mdp(const RunConfig& c, int jobs) {
  std::vector<std::string> contents(static_cast<std::size_t>(c.instances));
  auto records = run_instances(c.instances, jobs, [&](int id) {
    const std::uint64_t seed = derive_seed(c.seed, static_cast<std::uint64_t>(id));
    const Instance inst{id, seed, generated_mdp(c, seed), ""};
    Json rec = instance_header(inst);
    const ErgodicityCertificate cert = check_ergodicity(inst.mdp);
    Json cert_json{{"ergodic", cert.ergodic},
                   {"policies_checked", cert.policies_checked},
                   {"reason", cert.reason},
                   {"witness", cert.witness}};
    Json doc;
    doc["id"] = id;
    doc["seed"] = seed;
    doc["mdp"] = to_json(inst.mdp);
    doc["ergodicity"] = cert_json;
    contents[static_cast<std::size_t>(id)] = doc.dump(2) + "\n";
    rec["file"] = numbered("mdp", id, ".json");
    rec["ergodic"] = cert.ergodic;
    if (!cert.ergodic) rec["violation"] = Json{{"type", "ergodicity"}, {"certificate", cert_json}};
    return rec;
  });
  RunOutcome out = finish(c, std::move(records));
  for (int id = 0; id < c.instances; ++id) out.files[numbered("mdp", id, ".json")] = contents[static_cast<std::size_t>(id)];
  return out;
}

RunOutcome cmd_tabular_verify(const RunConfig& c, int jobs) {
  const auto instances = load_instances(c);
  const auto grid = uniform_grid(c.grid);
  EquiconnectOptions opt;
  opt.tol = c.value_tol;
  opt.max_refine_depth = c.refine_depth;
  auto records = run_instances(static_cast<int>(instances.size()), jobs, [&](int i) {
    const Instance& inst = instances[static_cast<std::size_t>(i)];
    return guarded(inst, [&](Json& rec) {
      const Mdp& m = inst.mdp;
      auto prng = stream(inst.seed, kPolicyStream);
      const Policy p1 = random_policy(prng, m.n_states(), m.n_actions());
      const Policy p2 = random_policy(prng, m.n_states(), m.n_actions());
      auto rrng = stream(inst.seed, kRewardStream);
      const auto rewards = random_rewards(rrng, c.rewards, m.n_states(), m.n_actions(), m.reward_bound());
      const auto trace = verify_equiconnectedness(m, p1, p2, rewards, grid, opt);
      // same endpoints, unrelated rewards: the sampled path must not change
      auto arng = stream(inst.seed, kAltRewardStream);
      const auto alt = verify_equiconnectedness(
          m, p1, p2, random_rewards(arng, 2, m.n_states(), m.n_actions(), m.reward_bound()), grid, opt);
      auto snapshot = [](const PathTrace<Policy>& t) {
        Json pts = Json::array();
        for (const auto& p : t.points) pts.push_back(matrix_to_json(p.table()));
        return Json{{"alphas", t.alphas}, {"points", pts}}.dump();
      };
      const bool independent = snapshot(trace) == snapshot(alt);
      const double stat = trace.max_residual("stationary_linearity");
      const double occ = trace.max_residual("occupancy_linearity");
      rec["samples"] = trace.alphas.size();
      rec["max_stationary_linearity"] = stat;
      rec["max_occupancy_linearity"] = occ;
      rec["min_value_margin"] = min_value_margin(trace.values);
      rec["reward_independent"] = independent;
      if (stat > c.linearity_tol || occ > c.linearity_tol)
        rec["violation"] = Json{{"type", "linearity"}, {"stationary", stat}, {"occupancy", occ}};
      else if (!independent)
        rec["violation"] = Json{{"type", "schedule"}, {"message", "path depends on the reward list"}};
    });
  });
  return finish(c, std::move(records));
}

NetArchitecture architecture_for(const RunConfig& c, int S, int A) {
  NetArchitecture arch;
  arch.beta = c.beta;
  if (!c.architecture.empty())
    arch.widths = c.architecture;
  else
    arch.widths = {S, std::max(2 * S, A + 2), A + 1, A};
  arch.validate();
  return arch;
}

RunOutcome cmd_nn_verify(const RunConfig& c, int jobs) {
  const auto instances = load_instances(c);
  auto records = run_instances(static_cast<int>(instances.size()), jobs, [&](int i) {
    const Instance& inst = instances[static_cast<std::size_t>(i)];
    return guarded(inst, [&](Json& rec) {
      const Mdp& m = inst.mdp;
      const NetArchitecture arch = architecture_for(c, m.n_states(), m.n_actions());
      const Matrix X = default_features(m.n_states(), arch.input_dim());
      const Theta t1 = random_theta(arch, derive_seed(inst.seed, kThetaStream1));
      const Theta t2 = random_theta(arch, derive_seed(inst.seed, kThetaStream2));
      auto rrng = stream(inst.seed, kRewardStream);
      const auto rewards = random_rewards(rrng, c.rewards, m.n_states(), m.n_actions(), m.reward_bound());
      NnPathOptions opt;
      opt.grid = uniform_grid(c.grid);
      opt.max_refine_depth = c.refine_depth;
      opt.value_tol = c.value_tol;
      opt.drift_tol = c.drift_tol;
      opt.seed = derive_seed(inst.seed, kPathStream);
      auto assemble = [&](const std::vector<RewardTable>& rs) {
        return c.route == "direct" ? assemble_direct_path(m, arch, X, t1, t2, rs, opt)
                                   : assemble_nn_path(m, arch, X, t1, t2, rs, opt);
      };
      const NnPathResult result = assemble(rewards);
      auto arng = stream(inst.seed, kAltRewardStream);
      const NnPathResult alt = assemble(random_rewards(arng, 2, m.n_states(), m.n_actions(), m.reward_bound()));
      auto snapshot = [](const NnPathResult& r) {
        Json pts = Json::array();
        for (const auto& p : r.trace.points) pts.push_back(to_json(p));
        return Json{{"alphas", r.trace.alphas}, {"points", pts}}.dump();
      };
      const bool independent = snapshot(result) == snapshot(alt);
      double drift = 0.0;
      for (const auto& seg : result.segments) drift = std::max(drift, seg.max_output_drift);
      rec["architecture"] = arch.widths;
      rec["route"] = c.route;
      rec["path"] = path_manifest(result);
      rec["max_output_drift"] = drift;
      rec["min_value_margin"] = min_value_margin(result.trace.values);
      rec["reward_independent"] = independent;
      if (!result.certified)
        rec["violation"] = Json{{"type", "certificate"}, {"message", result.failure}};
      else if (drift > c.drift_tol)
        rec["violation"] = Json{{"type", "drift"}, {"max_output_drift", drift}};
      else if (!independent)
        rec["violation"] = Json{{"type", "schedule"}, {"message", "path depends on the reward list"}};
    });
  });
  return finish(c, std::move(records));
}

AttackSpec draw_spec(const RunConfig& c, const Instance& inst) {
  auto rng = stream(inst.seed, kTargetStream);
  std::uniform_int_distribution<int> u(0, inst.mdp.n_actions() - 1);
  AttackSpec spec;
  spec.target.resize(static_cast<std::size_t>(inst.mdp.n_states()));
  for (auto& a : spec.target) a = u(rng);
  spec.margin = c.margin;
  spec.reward_bound = inst.mdp.reward_bound();
  return spec;
}

Json spec_header(const AttackSpec& spec) { return Json{{"target", spec.target}, {"margin", spec.margin}}; }

RunOutcome cmd_attack(const RunConfig& c, int jobs) {
  const auto instances = load_instances(c);
  auto records = run_instances(static_cast<int>(instances.size()), jobs, [&](int i) {
    const Instance& inst = instances[static_cast<std::size_t>(i)];
    return guarded(inst, [&](Json& rec) {
      const AttackSpec spec = draw_spec(c, inst);
      const AttackResult res = attack(inst.mdp, spec);
      rec["spec"] = spec_header(spec);
      rec["attack"] = to_json(res);
      if (res.kkt.stationarity > c.kkt_tol || res.kkt.primal > 1e-8 || res.kkt.dual > 0.0 ||
          res.kkt.complementarity > 1e-7)
        rec["violation"] = Json{{"type", "kkt"}, {"kkt_residuals", rec["attack"]["kkt_residuals"]}};
    });
  });
  return finish(c, std::move(records));
}

RunOutcome cmd_defend(const RunConfig& c, int jobs) {
  const auto instances = load_instances(c);
  auto records = run_instances(static_cast<int>(instances.size()), jobs, [&](int i) {
    const Instance& inst = instances[static_cast<std::size_t>(i)];
    return guarded(inst, [&](Json& rec) {
      const AttackSpec spec = draw_spec(c, inst);
      const AttackResult res = attack(inst.mdp, spec);
      const RewardRegion region = region_from_anchor(inst.mdp, spec, res.reward);
      MaxminOptions opt;
      opt.tolerance = c.gap_tol;
      const MaxminResult mx = maxmin_value(inst.mdp, region, opt);
      rec["spec"] = spec_header(spec);
      rec["r_dagger"] = matrix_to_json(res.reward);
      rec["defense"] = Json{{"value", mx.value},
                            {"policy", to_json(mx.policy)},
                            {"witness", matrix_to_json(mx.witness)},
                            {"cross_check", Json{{"value", mx.iterative_value},
                                                 {"gap", mx.iterative_gap},
                                                 {"iterations", mx.iterations}}}};
    });
  });
  return finish(c, std::move(records));
}

RunOutcome cmd_minimax(const RunConfig& c, int jobs) {
  const auto instances = load_instances(c);
  auto records = run_instances(static_cast<int>(instances.size()), jobs, [&](int i) {
    const Instance& inst = instances[static_cast<std::size_t>(i)];
    return guarded(inst, [&](Json& rec) {
      const Mdp& m = inst.mdp;
      const AttackSpec spec = draw_spec(c, inst);
      MaxminOptions opt;
      opt.tolerance = c.gap_tol;
      rec["spec"] = spec_header(spec);
      double nn_gap = 0.0;
      if (c.network) {
        const NetArchitecture arch = architecture_for(c, m.n_states(), m.n_actions());
        const NnMinimaxReport nn = nn_minimax_gap(m, arch, default_features(m.n_states(), arch.input_dim()),
                                                  spec, derive_seed(inst.seed, kNetworkStream), 1e-9, opt);
        rec["minimax"] = to_json(nn.tabular);
        rec["network"] = Json{{"architecture", arch.widths}, {"nn_maxmin", nn.nn_maxmin},
                              {"floor_loss", nn.floor_loss},  {"nn_gap", nn.nn_gap},
                              {"baseline", nn.baseline}};
        nn_gap = nn.nn_gap;
      } else {
        rec["minimax"] = to_json(minimax_gap(m, spec, opt));
      }
      const double gap = rec["minimax"]["gap"].get<double>();
      if (gap < -1e-6)
        rec["violation"] = Json{{"type", "weak-duality"}, {"gap", gap}};
      else if (gap > c.gap_tol)
        rec["violation"] = Json{{"type", "gap"}, {"gap", gap}};
      else if (nn_gap > c.nn_gap_tol || nn_gap < -1e-6)
        rec["violation"] = Json{{"type", "nn-gap"}, {"nn_gap", nn_gap}};
    });
  });
  return finish(c, std::move(records));
}

double worst_gradient_error(const ScalarField2D& field, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Rect& d = field.domain();
  const double h = 1e-5;
  std::uniform_real_distribution<double> ux(d.x_min + h, d.x_max - h), uy(d.y_min + h, d.y_max - h);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double x = ux(rng), y = uy(rng);
    const Point2 fd((field.value(x + h, y) - field.value(x - h, y)) / (2 * h),
                    (field.value(x, y + h) - field.value(x, y - h)) / (2 * h));
    const Point2 an = field.gradient(x, y);
    worst = std::max(worst, (fd - an).lpNorm<Eigen::Infinity>() / std::max(1.0, an.lpNorm<Eigen::Infinity>()));
  }
  return worst;
}

RunOutcome cmd_landscape(const RunConfig& c, int) {
  const ScalarField2D f = field_f(), g = field_g();
  std::vector<std::string> problems;

  const auto f_points = find_stationary_points(f);
  const bool two_maxima = f_points.size() == 2 && std::all_of(f_points.begin(), f_points.end(), [](const auto& p) {
                            return p.kind == PointKind::Maximum && std::abs(std::abs(p.x) - 3.05) <= 1e-2 &&
                                   std::abs(p.y + 1.12) <= 1e-2;
                          });
  if (!two_maxima) problems.push_back("f does not have exactly two maxima near (+-3.05, -1.12)");
  double top = -kInf, spread = 0.0;
  for (const auto& p : f_points) top = std::max(top, p.value);
  for (const auto& p : f_points) spread = std::max(spread, top - p.value);
  if (spread > 1e-9) problems.push_back("f maxima have different values");

  std::map<std::string, int> f_components;
  for (double off : c.f_level_offsets) {
    const ComponentScan scan = superlevel_components(f, top - off, c.resolution);
    f_components["max-" + format_double(off)] = scan.count;
    if (scan.count != 2) problems.push_back("f has " + std::to_string(scan.count) + " components at max-" + format_double(off));
    if (scan.ambiguous) problems.push_back("f level max-" + format_double(off) + " sits on a grid tie");
  }
  const auto g_points = find_stationary_points(g);
  bool origin_ok = false;
  for (const auto& p : g_points)
    if (std::hypot(p.x, p.y) <= 1e-6) origin_ok = p.kind != PointKind::Maximum;
  if (!origin_ok) problems.push_back("g origin missing or classified as a maximum");
  std::map<std::string, int> g_components;
  for (double level : c.g_levels) {
    const ComponentScan scan = superlevel_components(g, level, c.resolution);
    g_components[format_double(level)] = scan.count;
    if (scan.count != 1) problems.push_back("g has " + std::to_string(scan.count) + " components at " + format_double(level));
    if (scan.ambiguous) problems.push_back("g level " + format_double(level) + " sits on a grid tie");
  }
  const double f_err = worst_gradient_error(f, derive_seed(c.seed, 0));
  const double g_err = worst_gradient_error(g, derive_seed(c.seed, 1));
  if (std::max(f_err, g_err) > 1e-5) problems.push_back("analytic gradient disagrees with finite differences");

  Json report;
  report["command"] = c.command;
  report["config"] = c.to_json();
  Json fj = census_to_json(f_points, f_components);
  fj["gradient_check"] = f_err;
  fj["max_value_spread"] = spread;
  Json gj = census_to_json(g_points, g_components);
  gj["gradient_check"] = g_err;
  report["f"] = std::move(fj);
  report["g"] = std::move(gj);
  report["summary"] = Json{{"violations", problems.size()}, {"problems", problems}};

  RunOutcome out;
  out.exit_code = problems.empty() ? 0 : 2;
  if (!problems.empty()) out.message = problems.front();
  out.files["report.json"] = report.dump(2) + "\n";
  std::ostringstream hf, hg;
  write_heatmap_csv(f, c.resolution, hf);
  write_heatmap_csv(g, c.resolution, hg);
  out.files["heatmap_f.csv"] = hf.str();
  out.files["heatmap_g.csv"] = hg.str();
  return out;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------

RunConfig RunConfig::defaults(const std::string& command) {
  if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end())
    throw InvalidInput("unknown command '" + command + "'");
  RunConfig c;
  c.command = command;
  if (command == "tabular-verify") {
    c.instances = 100;
  } else if (command == "nn-verify") {
    c.instances = 20;
    c.states_min = c.states_max = 3;
    c.actions_min = c.actions_max = 2;
    c.architecture = {3, 6, 4, 2};
    c.rewards = 10;
    c.value_tol = 1e-6;
  } else if (command == "attack" || command == "defend" || command == "minimax") {
    c.instances = 50;
    c.states_min = 1;
    c.states_max = 3;
    c.actions_min = c.actions_max = 2;
  }
  return c;
}

void RunConfig::merge(const Json& j) {
  if (!j.is_object()) throw InvalidInput("config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "command") {
        if (v.get<std::string>() != command) throw InvalidInput("config is for command '" + v.get<std::string>() + "'");
      } else if (key == "seed") seed = v.get<std::uint64_t>();
      else if (key == "instances") instances = v.get<int>();
      else if (key == "states_min") states_min = v.get<int>();
      else if (key == "states_max") states_max = v.get<int>();
      else if (key == "actions_min") actions_min = v.get<int>();
      else if (key == "actions_max") actions_max = v.get<int>();
      else if (key == "rewards") rewards = v.get<int>();
      else if (key == "grid") grid = v.get<int>();
      else if (key == "refine_depth") refine_depth = v.get<int>();
      else if (key == "value_tol") value_tol = v.get<double>();
      else if (key == "linearity_tol") linearity_tol = v.get<double>();
      else if (key == "drift_tol") drift_tol = v.get<double>();
      else if (key == "kkt_tol") kkt_tol = v.get<double>();
      else if (key == "gap_tol") gap_tol = v.get<double>();
      else if (key == "nn_gap_tol") nn_gap_tol = v.get<double>();
      else if (key == "margin") margin = v.get<double>();
      else if (key == "architecture") architecture = v.get<std::vector<int>>();
      else if (key == "beta") beta = v.get<double>();
      else if (key == "route") route = v.get<std::string>();
      else if (key == "network") network = v.get<bool>();
      else if (key == "resolution") resolution = v.get<int>();
      else if (key == "f_level_offsets") f_level_offsets = v.get<std::vector<double>>();
      else if (key == "g_levels") g_levels = v.get<std::vector<double>>();
      else if (key == "mdp_dir") mdp_dir = v.get<std::string>();
      else throw InvalidInput("unknown config key '" + key + "'");
    }
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("bad config value: ") + e.what());
  }
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw InvalidInput(what);
  };
  require(instances >= 1 && instances <= 100000, "instances must be in [1, 100000]");
  require(states_min >= 1 && states_min <= states_max, "need 1 <= states_min <= states_max");
  require(actions_min >= 1 && actions_min <= actions_max, "need 1 <= actions_min <= actions_max");
  require(std::pow(static_cast<double>(actions_max), states_max) <= static_cast<double>(kEnumerationCap),
          "actions_max^states_max exceeds the enumeration cap");
  require(rewards >= 1, "rewards must be positive");
  require(grid >= 2, "grid needs at least 2 points");
  require(refine_depth >= 0 && refine_depth <= 20, "refine_depth must be in [0, 20]");
  for (double t : {value_tol, linearity_tol, drift_tol, kkt_tol, gap_tol, nn_gap_tol})
    require(t > 0.0, "tolerances must be positive");
  require(margin >= 0.0, "margin must be nonnegative");
  require(beta > 0.0 && beta < 1.0, "beta must be in (0, 1)");
  require(route == "full-rank" || route == "direct", "route must be 'full-rank' or 'direct'");
  require(resolution >= 64, "resolution must be at least 64");
  if (!architecture.empty()) {
    NetArchitecture arch{architecture, beta};
    arch.validate();
    require(actions_min == actions_max && actions_max == arch.output_dim(),
            "architecture output width must equal the (fixed) action count");
    if (command == "minimax")
      require(states_min == states_max && states_max == arch.input_dim(),
              "minimax needs architecture input width equal to the (fixed) state count");
  }
}

Json RunConfig::to_json() const {
  Json j;
  j["command"] = command;
  j["seed"] = seed;
  j["instances"] = instances;
  j["states_min"] = states_min;
  j["states_max"] = states_max;
  j["actions_min"] = actions_min;
  j["actions_max"] = actions_max;
  j["rewards"] = rewards;
  j["grid"] = grid;
  j["refine_depth"] = refine_depth;
  j["value_tol"] = value_tol;
  j["linearity_tol"] = linearity_tol;
  j["drift_tol"] = drift_tol;
  j["kkt_tol"] = kkt_tol;
  j["gap_tol"] = gap_tol;
  j["nn_gap_tol"] = nn_gap_tol;
  j["margin"] = margin;
  j["architecture"] = architecture;
  j["beta"] = beta;
  j["route"] = route;
  j["network"] = network;
  j["resolution"] = resolution;
  j["f_level_offsets"] = f_level_offsets;
  j["g_levels"] = g_levels;
  j["mdp_dir"] = mdp_dir;
  return j;
}

RunOutcome run_command(const RunConfig& config, int jobs) {
  config.validate();
  jobs = std::max(1, jobs);
  const std::string& cmd = config.command;
  if (cmd == "gen-mdp") return cmd_gen_mdp(config, jobs);
  if (cmd == "tabular-verify") return cmd_tabular_verify(config, jobs);
  if (cmd == "nn-verify") return cmd_nn_verify(config, jobs);
  if (cmd == "attack") return cmd_attack(config, jobs);
  if (cmd == "defend") return cmd_defend(config, jobs);
  if (cmd == "minimax") return cmd_minimax(config, jobs);
  if (cmd == "landscape") return cmd_landscape(config, jobs);
  throw InvalidInput("unknown command '" + cmd + "'");
}

int cli_main(int argc, char** argv) {
  CLI::App app{"Connectivity and robustness verification runs"};
  std::string command, config_path, out_dir = "out";
  std::uint64_t seed = 0;
  int instances = 0, grid = 0, jobs = 1;
  app.add_option("command", command, "gen-mdp, tabular-verify, nn-verify, attack, defend, minimax or landscape")
      ->required()
      ->check(CLI::IsMember(kCommands));
  app.add_option("--config", config_path, "JSON config; explicit flags override it")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Base seed");
  auto* inst_opt = app.add_option("--instances", instances, "Number of instances")->check(CLI::PositiveNumber);
  auto* grid_opt = app.add_option("--grid", grid, "Alpha grid points, or heatmap resolution for landscape")
                       ->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "Output directory")->capture_default_str();
  app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    const std::string started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig config = RunConfig::defaults(command);
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      Json j;
      try {
        j = Json::parse(in);
      } catch (const Json::exception& e) {
        throw InvalidInput(config_path + ": " + e.what());
      }
      config.merge(j);
    }
    if (*seed_opt) config.seed = seed;
    if (*inst_opt) config.instances = instances;
    if (*grid_opt) (command == "landscape" ? config.resolution : config.grid) = grid;

    const RunOutcome outcome = run_command(config, jobs);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    fs::create_directories(out_dir);
    for (const auto& [name, content] : outcome.files) write_file(fs::path(out_dir) / name, content);
    Json meta;
    meta["command"] = command;
    meta["started_utc"] = started;
    meta["finished_utc"] = utc_now();
    meta["wall_seconds"] = wall;
    meta["jobs"] = jobs;
    meta["exit_code"] = outcome.exit_code;
    write_file(fs::path(out_dir) / "metadata.json", meta.dump(2) + "\n");

    if (outcome.exit_code == 0)
      std::cout << command << ": pass (" << out_dir << ")\n";
    else
      std::cerr << command << ": violation " << outcome.message << "\n";
    return outcome.exit_code;
  } catch (const std::exception& e) {
    std::cerr << command << ": error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace rlconn
