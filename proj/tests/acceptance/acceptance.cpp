// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rlconn/attack_defense.hpp"
#include "rlconn/cli.hpp"
#include "rlconn/errors.hpp"
#include "rlconn/landscape.hpp"
#include "rlconn/neural_paths.hpp"
#include "rlconn/random.hpp"
#include "rlconn/tabular_paths.hpp"

using namespace rlconn;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail << "failed: " << what << "; ";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

Matrix gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Matrix::NullaryExpr(r, c, [&] { return n(rng); });
}

Policy random_policy(std::mt19937_64& rng, int S, int A, double low = 0.0) {
  std::uniform_real_distribution<double> u(low, 1.0);
  Matrix t = Matrix::NullaryExpr(S, A, [&] { return u(rng) + 1e-3; });
  for (int s = 0; s < S; ++s) t.row(s) /= t.row(s).sum();
  return Policy(t);
}

std::vector<RewardTable> random_rewards(std::mt19937_64& rng, int n, int S, int A) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<RewardTable> out;
  for (int k = 0; k < n; ++k) out.push_back(RewardTable::NullaryExpr(S, A, [&] { return u(rng); }));
  return out;
}

std::vector<int> random_target(std::mt19937_64& rng, int S, int A) {
  std::uniform_int_distribution<int> u(0, A - 1);
  std::vector<int> t(static_cast<std::size_t>(S));
  for (auto& a : t) a = u(rng);
  return t;
}

std::string policy_snapshot(const PathTrace<Policy>& trace) {
  std::string s;
  for (std::size_t i = 0; i < trace.alphas.size(); ++i)
    s += format_double(trace.alphas[i]) + to_json(trace.points[i]).dump() + "\n";
  return s;
}

// 1. Tabular sweep --------------------------------------------------------------
void tabular_sweep(Verdict& v) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> us(2, 6), ua(2, 4);
  const auto grid = uniform_grid(101);
  double worst_margin = kInf, worst_stat = 0.0, worst_occ = 0.0, worst_recheck = 0.0;
  std::size_t samples = 0;
  int violations = 0;
  for (int i = 0; i < 100; ++i) {
    const int S = us(rng), A = ua(rng);
    const Mdp m = random_ergodic_mdp(derive_seed(1, static_cast<std::uint64_t>(i)), S, A);
    const Policy p1 = random_policy(rng, S, A), p2 = random_policy(rng, S, A);
    const auto rewards = random_rewards(rng, 20, S, A);
    try {
      const auto trace = verify_equiconnectedness(m, p1, p2, rewards, grid);
      samples += trace.alphas.size();
      worst_stat = std::max(worst_stat, trace.max_residual("stationary_linearity"));
      worst_occ = std::max(worst_occ, trace.max_residual("occupancy_linearity"));
      // second route: evaluate the sampled policies directly
      const Matrix o1 = occupancy(m, p1).table, o2 = occupancy(m, p2).table;
      for (std::size_t k = 0; k < rewards.size(); ++k) {
        const double bound = std::min(average_reward(m, p1, rewards[k]), average_reward(m, p2, rewards[k]));
        for (std::size_t j = 0; j < trace.alphas.size(); ++j) {
          const double a = trace.alphas[j];
          const double direct = average_reward(m, trace.points[j], rewards[k]);
          worst_margin = std::min(worst_margin, direct - bound);
          worst_recheck = std::max(worst_recheck, std::abs(direct - trace.values[k][j]));
          if (k == 0)
            worst_occ = std::max(worst_occ, max_abs(occupancy(m, trace.points[j]).table - (a * o1 + (1 - a) * o2)));
        }
      }
    } catch (const BoundViolated&) {
      ++violations;
    }
  }
  const double secs = seconds_since(t0);
  v.require(violations == 0, "bound violations");
  v.require(worst_margin >= -1e-9, "value below the weaker endpoint");
  v.require(worst_stat <= 1e-8 && worst_occ <= 1e-8, "linearity residual above 1e-8");
  v.require(worst_recheck <= 1e-9, "trace values disagree with direct evaluation");
  v.require(secs < 60.0, "runtime above 60 s");
  v.detail << "100 MDPs x 20 rewards, " << samples << " samples, min margin " << worst_margin
           << ", stationary residual " << worst_stat << ", occupancy residual " << worst_occ << ", " << secs << " s";
}

// 2. Reward-independent snapshots -------------------------------------------------
void equiconnected(Verdict& v) {
  std::mt19937_64 rng(202);
  int compared = 0;
  for (int i = 0; i < 20; ++i) {
    const int S = 2 + i % 5, A = 2 + i % 3;
    const Mdp m = random_ergodic_mdp(derive_seed(2, static_cast<std::uint64_t>(i)), S, A);
    const Policy p1 = random_policy(rng, S, A), p2 = random_policy(rng, S, A);
    const auto grid = uniform_grid(101);
    const std::string a = policy_snapshot(verify_equiconnectedness(m, p1, p2, random_rewards(rng, 20, S, A), grid));
    const std::string b = policy_snapshot(verify_equiconnectedness(m, p1, p2, random_rewards(rng, 3, S, A), grid));
    // a reward list with a negated table is a different family on the same endpoints
    auto flipped = random_rewards(rng, 5, S, A);
    for (auto& r : flipped) r = -r;
    const std::string c = policy_snapshot(verify_equiconnectedness(m, p1, p2, flipped, grid));
    v.require(a == b && a == c, "snapshots differ between reward lists");
    ++compared;
  }
  v.detail << compared << " endpoint pairs, three reward lists each, snapshots byte-identical";
}

// 3. Network path sweep -----------------------------------------------------------
void network_sweep(Verdict& v) {
  const auto t0 = Clock::now();
  const NetArchitecture arch{{3, 6, 4, 2}};
  const Matrix X = default_features(3, 3);
  std::mt19937_64 rng(303);
  double worst_drift = 0.0, worst_margin = kInf, worst_recheck = 0.0;
  int certified = 0, independent = 0;
  for (int i = 0; i < 20; ++i) {
    const Mdp m = random_ergodic_mdp(derive_seed(3, static_cast<std::uint64_t>(i)), 3, 2);
    const Theta t1 = random_theta(arch, derive_seed(30, static_cast<std::uint64_t>(i)));
    const Theta t2 = random_theta(arch, derive_seed(31, static_cast<std::uint64_t>(i)));
    const auto rewards = random_rewards(rng, 10, 3, 2);
    NnPathOptions opt;
    opt.seed = static_cast<std::uint64_t>(i);
    try {
      const NnPathResult res = assemble_nn_path(m, arch, X, t1, t2, rewards, opt);
      certified += res.certified;
      for (const auto& seg : res.segments) worst_drift = std::max(worst_drift, seg.max_output_drift);
      for (std::size_t k = 0; k < rewards.size(); ++k) {
        const double bound = std::min(value_of_theta(m, arch, t1, X, rewards[k]), value_of_theta(m, arch, t2, X, rewards[k]));
        for (std::size_t j = 0; j < res.trace.alphas.size(); j += 7) {
          const double direct = value_of_theta(m, arch, res.trace.points[j], X, rewards[k]);
          worst_margin = std::min(worst_margin, direct - bound);
          worst_recheck = std::max(worst_recheck, std::abs(direct - res.trace.values[k][j]));
        }
      }
      const NnPathResult alt = assemble_nn_path(m, arch, X, t1, t2, random_rewards(rng, 2, 3, 2), opt);
      bool same = alt.trace.alphas == res.trace.alphas;
      for (std::size_t j = 0; same && j < res.trace.points.size(); ++j)
        same = to_json(res.trace.points[j]).dump() == to_json(alt.trace.points[j]).dump();
      independent += same;
    } catch (const Error& e) {
      v.require(false, std::string("instance ") + std::to_string(i) + ": " + e.what());
    }
  }
  const double secs = seconds_since(t0);
  v.require(certified == 20, "uncertified paths");
  v.require(worst_drift <= 1e-6, "output drift above 1e-6");
  v.require(worst_margin >= -1e-6, "value below the weaker endpoint");
  v.require(worst_recheck <= 1e-9, "trace values disagree with direct evaluation");
  v.require(independent == 20, "schedule depends on the rewards");
  v.require(secs < 300.0, "runtime above 5 min");
  v.detail << certified << "/20 certified, max drift " << worst_drift << ", min margin " << worst_margin
           << ", reward-independent " << independent << "/20, " << secs << " s";
}

// 4. Exact realization --------------------------------------------------------------
void realization(Verdict& v) {
  const NetArchitecture arch{{3, 6, 4, 2}};
  const Matrix X = default_features(3, 3);
  std::mt19937_64 rng(404);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Theta base = random_theta(arch, static_cast<std::uint64_t>(400 + i));
    const std::vector<Layer> rest(base.layers.begin() + 1, base.layers.end());
    const Policy pi = random_policy(rng, 3, 2, 0.01);
    const Theta theta = realize_policy(arch, X, rest, pi);
    worst = std::max(worst, max_abs(forward(arch, theta, X).policy.table() - pi.table()));
  }
  v.require(worst <= 1e-8, "realized policy off by more than 1e-8");
  v.detail << "50 policies, max error " << worst;
}

// 5. Lemma-level contracts ------------------------------------------------------------
double product_drift(const Matrix& X, const BlockPath& path, double beta, int samples) {
  const Matrix Z = block_product(X, path.keyframes().front(), beta);
  double drift = 0.0;
  for (int i = 0; i <= samples; ++i)
    drift = std::max(drift, max_abs(block_product(X, path.at(double(i) / samples), beta) - Z));
  return drift;
}

void lemma_contracts(Verdict& v) {
  const NetArchitecture arch{{3, 6, 4, 2}};
  const double beta = arch.beta;
  std::mt19937_64 rng(505);
  double restore_drift = 0.0, swap_drift = 0.0, tall_sv = kInf;
  int restored = 0;
  const Matrix I = Matrix::Identity(3, 3);
  for (int i = 0; i < 10; ++i) {
    // neurons silent on one state (and two of them duplicated): rank 2 or 1
    FirstLayerBlock blk{gaussian(rng, 3, 6), gaussian(rng, 6, 1), gaussian(rng, 6, 4)};
    const int dead = 1 + i % 2;
    for (int j = 0; j < 6; ++j)
      for (int s = 3 - dead; s < 3; ++s) blk.W(s, j) = -blk.b(j);
    blk.W.col(1) = blk.W.col(0);
    blk.b(1) = blk.b(0);
    const BlockPath p = rank_restore_first_layer(I, blk, beta, static_cast<std::uint64_t>(i));
    const FirstLayerBlock& last = p.keyframes().back();
    restored += numerical_rank(block_activation(I, last.W, last.b, beta), 1e-6) == 3;
    restore_drift = std::max(restore_drift, product_drift(I, p, beta, 300));
  }
  const Matrix X = default_features(3, 3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Theta a = random_theta(arch, 500 + seed), b = random_theta(arch, 600 + seed);
    const BlockPath p = first_layer_swap(X, {a.layers[0].W, a.layers[0].b, a.layers[1].W}, b.layers[0].W,
                                         b.layers[0].b, beta, seed);
    swap_drift = std::max(swap_drift, product_drift(X, p, beta, 500));
  }
  const auto fine = uniform_grid(2001);
  for (auto [m, n] : {std::pair{3, 1}, std::pair{4, 2}, std::pair{6, 2}, std::pair{5, 4}, std::pair{6, 4}}) {
    const Matrix F = gaussian(rng, m, n);
    for (const Matrix& G : {Matrix(-F), gaussian(rng, m, n)}) {
      const MatrixPath path = fullrank_tall_path(F, G, uniform_grid(101));
      for (double t : fine) tall_sv = std::min(tall_sv, min_singular_value(path.at(t)));
    }
  }
  v.require(restored == 10, "rank not restored to |S|");
  v.require(restore_drift <= 1e-8, "restoration drift above 1e-8");
  v.require(swap_drift <= 1e-8, "swap drift above 1e-8");
  v.require(tall_sv >= 1e-9, "tall path loses rank");
  v.detail << "restore " << restored << "/10 (drift " << restore_drift << "), swap drift " << swap_drift
           << ", tall-path min singular value " << tall_sv << " incl. antipodal pairs";
}

// 6. Attack ------------------------------------------------------------------------------
Mdp bandit(double r0, double r1) {
  RewardTable r(1, 2);
  r << r0, r1;
  return Mdp(1, 2, Matrix::Ones(2, 1), r);
}

void attack_checks(Verdict& v) {
  std::mt19937_64 rng(606);
  double worst_kkt = 0.0, worst_comp = 0.0, worst_primal = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int S = 1 + i % 4, A = 2 + i % 2;
    const Mdp m = random_ergodic_mdp(derive_seed(6, static_cast<std::uint64_t>(i)), S, A);
    const AttackResult res = attack(m, AttackSpec{random_target(rng, S, A), 0.1});
    worst_kkt = std::max({worst_kkt, res.kkt.stationarity, res.kkt.dual});
    worst_comp = std::max(worst_comp, res.kkt.complementarity);
    worst_primal = std::max(worst_primal, res.kkt.primal);
  }
  const AttackResult ex = attack(bandit(0.0, 1.0), AttackSpec{{0}, 0.5});
  const double closed = std::max(std::abs(ex.reward(0, 0) - 0.75), std::abs(ex.reward(0, 1) - 0.25));

  // two-stage lattice search for the nearest point with the required margin
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_grid = 0.0;
  for (int t = 0; t < 10; ++t) {
    const double r0 = u(rng), r1 = u(rng), eps = 0.3 * u(rng);
    const int target = t % 2;
    const AttackResult res = attack(bandit(r0, r1), AttackSpec{{target}, eps});
    const double sign = target == 0 ? 1.0 : -1.0;
    double best = kInf, bx = 0, by = 0;
    auto scan = [&](double x0, double y0, double h) {
      for (int i = 0; i <= 400; ++i)
        for (int j = 0; j <= 400; ++j) {
          const double x = x0 + h * i, y = y0 + h * j;
          if (sign * (x - y) < eps) continue;
          const double d = (x - r0) * (x - r0) + (y - r1) * (y - r1);
          if (d < best) best = d, bx = x, by = y;
        }
    };
    const double h = 3.0 / 400;
    scan(-1.0, -1.0, h);
    scan(bx - 2 * h, by - 2 * h, 4 * h / 400);
    worst_grid = std::max({worst_grid, std::abs(res.reward(0, 0) - bx), std::abs(res.reward(0, 1) - by)});
  }
  v.require(worst_kkt <= 1e-6, "stationarity or dual residual above 1e-6");
  v.require(worst_comp <= 1e-7 && worst_primal <= 1e-8, "complementarity or margin residual");
  v.require(closed <= 1e-9, "closed-form example off");
  v.require(worst_grid <= 1e-3, "lattice search disagrees");
  v.detail << "KKT max " << worst_kkt << " on 100 instances, closed form error " << closed
           << ", lattice agreement " << worst_grid;
}

// 7. Minimax equality -----------------------------------------------------------------------
void minimax_checks(Verdict& v) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(707);
  double worst_gap = 0.0, min_gap = kInf, worst_cross = 0.0;
  int instances = 0;
  for (int i = 0; i < 50; ++i) {
    const int S = 1 + i % 3;
    const int actions = i % 10 == 9 ? 1 : 2;  // a few single-action instances
    const Mdp m = random_ergodic_mdp(derive_seed(7, static_cast<std::uint64_t>(i)), S, actions);
    try {
      const MinimaxReport rep = minimax_gap(m, AttackSpec{random_target(rng, S, actions), 0.1});
      worst_gap = std::max(worst_gap, std::abs(rep.gap));
      min_gap = std::min(min_gap, rep.gap);
      worst_cross = std::max(worst_cross, std::abs(rep.maxmin.iterative_value - rep.maxmin.value));
      ++instances;
    } catch (const Error& e) {
      v.require(false, std::string("instance ") + std::to_string(i) + ": " + e.what());
    }
  }
  const double secs = seconds_since(t0);
  v.require(worst_gap <= 1e-5, "gap above 1e-5");
  v.require(min_gap >= -1e-6, "weak duality violated");
  v.require(worst_cross <= 1e-5, "LP and extragradient disagree");
  v.require(secs < 300.0, "runtime above 5 min");
  v.detail << instances << " instances, max |gap| " << worst_gap << ", min gap " << min_gap
           << ", LP vs extragradient " << worst_cross << ", " << secs << " s";
}

// 8. Network minimax ---------------------------------------------------------------------------
void nn_minimax_checks(Verdict& v) {
  std::mt19937_64 rng(808);
  double worst = -kInf, worst_floor = 0.0;
  for (int i = 0; i < 10; ++i) {
    const int S = 1 + i % 3;
    const NetArchitecture arch{{S, std::max(2 * S, 4), 3, 2}};
    const Mdp m = random_ergodic_mdp(derive_seed(8, static_cast<std::uint64_t>(i)), S, 2);
    const NnMinimaxReport rep = nn_minimax_gap(m, arch, default_features(S, S), AttackSpec{random_target(rng, S, 2), 0.1},
                                               static_cast<std::uint64_t>(i));
    worst = std::max(worst, rep.nn_gap);
    worst_floor = std::max(worst_floor, std::abs(rep.floor_loss));
    v.require(rep.baseline <= rep.nn_maxmin + 1e-9, "realized network worse than the zero network");
  }
  v.require(worst <= 2e-5, "network gap above 2e-5");
  v.detail << "10 instances, max network gap " << worst << ", max floor loss " << worst_floor;
}

// 9. Planar fields -----------------------------------------------------------------------------
void landscape_checks(Verdict& v) {
  const ScalarField2D f = field_f(), g = field_g();
  const auto pts = find_stationary_points(f);
  bool located = pts.size() == 2;
  for (const auto& p : pts)
    located = located && p.kind == PointKind::Maximum && std::abs(std::abs(p.x) - 3.05) <= 1e-2 &&
              std::abs(p.y + 1.12) <= 1e-2;
  const double spread = pts.size() == 2 ? std::abs(pts[0].value - pts[1].value) : kInf;
  const double top = pts.empty() ? 0.0 : pts[0].value;
  std::vector<int> f_counts, g_counts;
  for (int res : {512, 1024}) {
    f_counts.push_back(superlevel_components(f, top - 0.1, res).count);
    for (double level : {0.0, 1.0, 3.0, 3.9}) g_counts.push_back(superlevel_components(g, level, res).count);
  }
  g_counts.push_back(superlevel_components(field_g({-5.0, 5.0, -5.0, 5.0}), -10.0, 512).count);
  double worst_fd = 0.0;
  std::mt19937_64 rng(909);
  for (const ScalarField2D* field : {&f, &g}) {
    const Rect& d = field->domain();
    const double h = 1e-5;
    std::uniform_real_distribution<double> ux(d.x_min + h, d.x_max - h), uy(d.y_min + h, d.y_max - h);
    for (int i = 0; i < 1000; ++i) {
      const double x = ux(rng), y = uy(rng);
      const Point2 fd((field->value(x + h, y) - field->value(x - h, y)) / (2 * h),
                      (field->value(x, y + h) - field->value(x, y - h)) / (2 * h));
      const Point2 an = field->gradient(x, y);
      worst_fd = std::max(worst_fd, (fd - an).lpNorm<Eigen::Infinity>() / std::max(1.0, an.lpNorm<Eigen::Infinity>()));
    }
  }
  v.require(located, "stationary points of f");
  v.require(spread <= 1e-9, "maxima values differ");
  v.require(std::all_of(f_counts.begin(), f_counts.end(), [](int c) { return c == 2; }), "f component count");
  v.require(std::all_of(g_counts.begin(), g_counts.end(), [](int c) { return c == 1; }), "g component count");
  v.require(worst_fd <= 1e-5, "gradient check");
  v.detail << pts.size() << " stationary points of f";
  if (pts.size() == 2) v.detail << " at (" << pts[0].x << ", " << pts[0].y << ") and (" << pts[1].x << ", " << pts[1].y << ")";
  v.detail << ", value spread " << spread << ", f components " << f_counts[0] << ", g components 1 at "
           << g_counts.size() << " levels, gradient error " << worst_fd;
}

// 10. CLI determinism ----------------------------------------------------------------------------
void determinism(Verdict& v) {
  int runs = 0;
  for (const auto& cmd : kCommands) {
    RunConfig c = RunConfig::defaults(cmd);
    c.seed = 1234;
    const RunOutcome a = run_command(c, 1);
    const RunOutcome b = run_command(c, 4);
    const RunOutcome again = run_command(c, 2);
    v.require(a.files == b.files && a.files == again.files, cmd + " output depends on the worker count");
    v.require(a.exit_code == 0, cmd + " reported a violation: " + a.message);
    runs += 3;
  }
  v.detail << runs << " runs over " << kCommands.size() << " subcommands, outputs byte-identical for jobs 1, 2, 4";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Verdict&)>>> criteria = {
      {"tabular sweep: value bound and linearity", tabular_sweep},
      {"equiconnectedness: reward-independent snapshots", equiconnected},
      {"network path sweep: certified, output-preserving, reward-independent", network_sweep},
      {"exact policy realization", realization},
      {"rank restoration, first-layer swap, tall full-rank path", lemma_contracts},
      {"attack: KKT, closed form, lattice search", attack_checks},
      {"minimax equality with cross-check", minimax_checks},
      {"network minimax gap", nn_minimax_checks},
      {"planar fields: stationary points and superlevel components", landscape_checks},
      {"CLI determinism across worker counts", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      criteria[i].second(v);
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << "exception: " << e.what();
    }
    failed += !v.pass;
    std::printf("%s criterion %zu: %s | %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                v.detail.str().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
