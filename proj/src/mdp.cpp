#include "rlconn/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <random>

#include "rlconn/errors.hpp"

namespace rlconn {

namespace {

constexpr double kStochasticTol = 1e-12;

void require_stochastic_rows(const Matrix& M, const char* what) {
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    if ((M.row(i).array() < 0.0).any() || !M.row(i).allFinite())
      throw InvalidInput(std::string(what) + ": negative or non-finite entry in row " +
                         std::to_string(i));
    if (std::abs(M.row(i).sum() - 1.0) > kStochasticTol)
      throw InvalidInput(std::string(what) + ": row " + std::to_string(i) +
                         " does not sum to 1");
  }
}

void require_compatible(const Mdp& mdp, const Policy& pi) {
  if (pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions())
    throw ShapeMismatch("policy shape does not match the MDP");
}

}  // namespace

Policy::Policy(Matrix table) : table_(std::move(table)) {
  if (table_.rows() == 0 || table_.cols() == 0) throw InvalidInput("empty policy table");
  require_stochastic_rows(table_, "policy");
}

Policy Policy::uniform(int n_states, int n_actions) {
  return Policy(Matrix::Constant(n_states, n_actions, 1.0 / n_actions));
}

Policy Policy::deterministic(const std::vector<int>& actions, int n_actions) {
  Matrix table = Matrix::Zero(static_cast<Eigen::Index>(actions.size()), n_actions);
  for (std::size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] < 0 || actions[s] >= n_actions) throw InvalidInput("action out of range");
    table(static_cast<Eigen::Index>(s), actions[s]) = 1.0;
  }
  return Policy(std::move(table));
}

Mdp::Mdp(int n_states, int n_actions, Matrix kernel, RewardTable reward, double reward_bound)
    : n_states_(n_states),
      n_actions_(n_actions),
      kernel_(std::move(kernel)),
      reward_(std::move(reward)),
      reward_bound_(reward_bound) {
  if (n_states_ <= 0 || n_actions_ <= 0) throw InvalidInput("state and action counts must be positive");
  if (kernel_.rows() != n_states_ * n_actions_ || kernel_.cols() != n_states_)
    throw ShapeMismatch("kernel must be (|S||A|) x |S|");
  if (reward_.rows() != n_states_ || reward_.cols() != n_actions_)
    throw ShapeMismatch("reward must be |S| x |A|");
  if (!(reward_bound_ > 0.0)) throw InvalidInput("reward bound must be positive");
  require_stochastic_rows(kernel_, "kernel");
  if (!reward_.allFinite() || (reward_.array() < 0.0).any() ||
      (reward_.array() > reward_bound_).any())
    throw InvalidInput("reward entries must lie in [0, reward_bound]");
}

Mdp Mdp::with_reward(RewardTable reward) const {
  return Mdp(n_states_, n_actions_, kernel_, std::move(reward), reward_bound_);
}

Matrix transition_matrix(const Mdp& mdp, const Policy& pi) {
  require_compatible(mdp, pi);
  const int S = mdp.n_states();
  const int A = mdp.n_actions();
  Matrix P = Matrix::Zero(S, S);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a)
      if (pi(s, a) != 0.0) P.col(s) += pi(s, a) * mdp.row(s, a).transpose();
  return P;
}

StationaryDistribution stationary_distribution(const Matrix& P, double tol, int max_iter) {
  if (P.rows() != P.cols() || P.rows() == 0) throw ShapeMismatch("transition matrix must be square");
  const Eigen::Index n = P.rows();
  // Non-uniform start: a uniform vector is already stationary for doubly
  // stochastic periodic chains and would hide the periodicity.
  Vector mu = Vector::LinSpaced(n, 1.0, static_cast<double>(n));
  mu /= mu.sum();
  Vector next(n);
  for (int it = 1; it <= max_iter; ++it) {
    next.noalias() = P * mu;
    next /= next.sum();
    const double residual = (next - mu).cwiseAbs().maxCoeff();
    mu.swap(next);
    if (residual <= tol) {
      const double check = (P * mu - mu).cwiseAbs().maxCoeff();
      if (check <= tol) return {mu, check, it};
    }
  }
  throw NonConvergence("power iteration did not reach tolerance within " +
                       std::to_string(max_iter) + " iterations");
}

OccupancyMeasure occupancy(const Mdp& mdp, const Policy& pi) {
  const auto stat = stationary_distribution(transition_matrix(mdp, pi));
  return {stat.mu.asDiagonal() * pi.table()};
}

Policy policy_from_occupancy(const OccupancyMeasure& mu_hat) {
  const Matrix& M = mu_hat.table;
  Matrix table(M.rows(), M.cols());
  for (Eigen::Index s = 0; s < M.rows(); ++s) {
    const double mass = M.row(s).sum();
    if (!(mass > 0.0)) throw ZeroStateMass("state " + std::to_string(s) + " has no mass");
    table.row(s) = M.row(s) / mass;
    // Exact renormalization so the row passes the 1e-12 policy check.
    table.row(s) /= table.row(s).sum();
  }
  return Policy(std::move(table));
}

double average_reward(const OccupancyMeasure& mu_hat, const RewardTable& reward) {
  if (mu_hat.table.rows() != reward.rows() || mu_hat.table.cols() != reward.cols())
    throw ShapeMismatch("reward shape does not match occupancy");
  return mu_hat.table.cwiseProduct(reward).sum();
}

double average_reward(const Mdp& mdp, const Policy& pi, const RewardTable& reward) {
  return average_reward(occupancy(mdp, pi), reward);
}

double average_reward(const Mdp& mdp, const Policy& pi) {
  return average_reward(mdp, pi, mdp.reward());
}

double flow_balance_residual(const Mdp& mdp, const OccupancyMeasure& mu_hat) {
  const int S = mdp.n_states();
  const int A = mdp.n_actions();
  Vector inflow = Vector::Zero(S);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) inflow += mu_hat.table(s, a) * mdp.row(s, a).transpose();
  return (mu_hat.table.rowwise().sum() - inflow).cwiseAbs().maxCoeff();
}

std::vector<std::vector<int>> enumerate_action_selections(int n_states, int n_actions,
                                                          std::size_t cap) {
  double count = std::pow(static_cast<double>(n_actions), n_states);
  if (count > static_cast<double>(cap))
    throw CapExceeded(std::to_string(n_actions) + "^" + std::to_string(n_states) +
                      " deterministic policies exceed the cap of " + std::to_string(cap));
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(count));
  std::vector<int> digits(static_cast<std::size_t>(n_states), 0);
  while (true) {
    out.push_back(digits);
    int pos = n_states - 1;
    while (pos >= 0 && ++digits[static_cast<std::size_t>(pos)] == n_actions) {
      digits[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  return out;
}

std::vector<Policy> enumerate_deterministic_policies(const Mdp& mdp, std::size_t cap) {
  std::vector<Policy> out;
  for (const auto& sel : enumerate_action_selections(mdp.n_states(), mdp.n_actions(), cap))
    out.push_back(Policy::deterministic(sel, mdp.n_actions()));
  return out;
}

namespace {

// BFS distances from node 0 over adjacency lists; -1 marks unreachable.
std::vector<int> bfs_levels(const std::vector<std::vector<int>>& adj) {
  std::vector<int> level(adj.size(), -1);
  std::queue<int> q;
  level[0] = 0;
  q.push(0);
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v : adj[static_cast<std::size_t>(u)])
      if (level[static_cast<std::size_t>(v)] < 0) {
        level[static_cast<std::size_t>(v)] = level[static_cast<std::size_t>(u)] + 1;
        q.push(v);
      }
  }
  return level;
}

}  // namespace

ErgodicityCertificate check_ergodicity(const Mdp& mdp, std::size_t cap) {
  const int S = mdp.n_states();
  ErgodicityCertificate cert;
  for (const auto& sel : enumerate_action_selections(S, mdp.n_actions(), cap)) {
    ++cert.policies_checked;
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(S)), radj(static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s)
      for (int t = 0; t < S; ++t)
        if (mdp.prob(s, sel[static_cast<std::size_t>(s)], t) > 0.0) {
          adj[static_cast<std::size_t>(s)].push_back(t);
          radj[static_cast<std::size_t>(t)].push_back(s);
        }
    const auto fwd = bfs_levels(adj);
    const auto bwd = bfs_levels(radj);
    const bool strongly_connected =
        std::none_of(fwd.begin(), fwd.end(), [](int l) { return l < 0; }) &&
        std::none_of(bwd.begin(), bwd.end(), [](int l) { return l < 0; });
    if (!strongly_connected) {
      cert.ergodic = false;
      cert.witness = sel;
      cert.reason = "reducible";
      return cert;
    }
    // Period of an irreducible chain = gcd over edges u->v of level(u)+1-level(v).
    int period = 0;
    for (int u = 0; u < S; ++u)
      for (int v : adj[static_cast<std::size_t>(u)])
        period = std::gcd(period, std::abs(fwd[static_cast<std::size_t>(u)] + 1 -
                                           fwd[static_cast<std::size_t>(v)]));
    if (period != 1) {
      cert.ergodic = false;
      cert.witness = sel;
      cert.reason = "periodic";
      return cert;
    }
  }
  return cert;
}

Mdp random_ergodic_mdp(std::uint64_t seed, int n_states, int n_actions, double concentration) {
  if (!(concentration > 0.0)) throw InvalidInput("concentration must be positive");
  if (n_states <= 0 || n_actions <= 0) throw InvalidInput("state and action counts must be positive");
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix kernel(n_states * n_actions, n_states);
  for (Eigen::Index i = 0; i < kernel.rows(); ++i) {
    for (Eigen::Index j = 0; j < n_states; ++j)
      kernel(i, j) = std::max(gamma(rng), std::numeric_limits<double>::min());
    kernel.row(i) /= kernel.row(i).sum();
  }
  RewardTable reward(n_states, n_actions);
  for (Eigen::Index s = 0; s < n_states; ++s)
    for (Eigen::Index a = 0; a < n_actions; ++a) reward(s, a) = unit(rng);
  return Mdp(n_states, n_actions, std::move(kernel), std::move(reward), 1.0);
}

Mdp discounted_to_average(const Mdp& mdp, double gamma, const Vector& restart) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidInput("gamma must lie in [0, 1]");
  if (restart.size() != mdp.n_states()) throw ShapeMismatch("restart must have |S| entries");
  if ((restart.array() < 0.0).any() || std::abs(restart.sum() - 1.0) > kStochasticTol)
    throw InvalidInput("restart must be a probability distribution");
  Matrix kernel = gamma * mdp.kernel();
  kernel.rowwise() += (1.0 - gamma) * restart.transpose();
  return Mdp(mdp.n_states(), mdp.n_actions(), std::move(kernel), mdp.reward(), mdp.reward_bound());
}

Json to_json(const Mdp& mdp) {
  Json j;
  j["n_states"] = mdp.n_states();
  j["n_actions"] = mdp.n_actions();
  Json kernel = Json::array();
  for (int s = 0; s < mdp.n_states(); ++s) {
    Json per_action = Json::array();
    for (int a = 0; a < mdp.n_actions(); ++a)
      per_action.push_back(vector_to_json(mdp.row(s, a).transpose()));
    kernel.push_back(std::move(per_action));
  }
  j["kernel"] = std::move(kernel);
  j["reward"] = matrix_to_json(mdp.reward());
  j["reward_bound"] = mdp.reward_bound();
  return j;
}

Mdp mdp_from_json(const Json& j) {
  try {
    const int S = j.at("n_states").get<int>();
    const int A = j.at("n_actions").get<int>();
    if (S <= 0 || A <= 0) throw InvalidInput("state and action counts must be positive");
    const Json& kj = j.at("kernel");
    if (static_cast<int>(kj.size()) != S) throw ShapeMismatch("kernel must have |S| entries");
    Matrix kernel(S * A, S);
    for (int s = 0; s < S; ++s) {
      if (static_cast<int>(kj.at(s).size()) != A) throw ShapeMismatch("kernel[s] must have |A| entries");
      for (int a = 0; a < A; ++a) {
        const Vector row = vector_from_json(kj.at(s).at(a));
        if (row.size() != S) throw ShapeMismatch("kernel[s][a] must have |S| entries");
        kernel.row(s * A + a) = row.transpose();
      }
    }
    const double bound = j.contains("reward_bound") ? j.at("reward_bound").get<double>() : 1.0;
    return Mdp(S, A, std::move(kernel), matrix_from_json(j.at("reward")), bound);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed MDP document: ") + e.what());
  }
}

Json to_json(const Policy& pi) { return matrix_to_json(pi.table()); }

}  // namespace rlconn
