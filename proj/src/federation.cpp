#include "fova/federation.hpp"

#include <numeric>
#include <thread>

#include "fova/errors.hpp"
#include "fova/rng.hpp"

namespace fova {

namespace {

double mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace

double RoundMetrics::kl_mean() const { return mean(kl_local_global); }
double RoundMetrics::tv_mean() const { return mean(tv_local_global); }

std::pair<Policy, QTable> aggregate(const std::vector<Policy>& policies, const std::vector<QTable>& qtables) {
  if (policies.empty() || qtables.empty()) throw ArgumentError("aggregate: empty input");
  if (policies.size() != qtables.size()) throw ArgumentError("aggregate: policy and Q counts differ");
  const auto rows = policies.front().probs().rows();
  const auto cols = policies.front().probs().cols();
  Matrix pi = Matrix::Zero(rows, cols);
  Matrix q = Matrix::Zero(rows, cols);
  for (std::size_t k = 0; k < policies.size(); ++k) {
    if (policies[k].probs().rows() != rows || policies[k].probs().cols() != cols ||
        qtables[k].values.rows() != rows || qtables[k].values.cols() != cols)
      throw ArgumentError("aggregate: shape mismatch");
    pi += policies[k].probs();
    q += qtables[k].values;
  }
  const double inv = 1.0 / static_cast<double>(policies.size());
  pi *= inv;
  q *= inv;
  // Renormalize rows to absorb rounding in the sum.
  for (Eigen::Index s = 0; s < rows; ++s) pi.row(s) /= pi.row(s).sum();
  return {Policy(std::move(pi)), QTable{std::move(q)}};
}

ServerState initial_server(const MdpSpec& mdp) {
  ServerState s;
  s.global_policy = Policy::uniform(mdp.n_states, mdp.n_actions);
  s.global_q.values = Matrix::Zero(mdp.n_states, mdp.n_actions);
  return s;
}

std::vector<ClientState> make_clients(const MdpSpec& mdp, const std::vector<Dataset>& federation,
                                      const HyperParams& params, const Policy& global_pi) {
  if (federation.empty()) throw ArgumentError("make_clients: empty federation");
  std::vector<ClientState> clients;
  clients.reserve(federation.size());
  for (const auto& d : federation) clients.push_back(make_client(d, mdp, params, global_pi));
  return clients;
}

std::pair<ServerState, RoundMetrics> run_round(const ServerState& server, std::vector<ClientState>& clients,
                                               const MdpSpec& mdp, const VoteMode& mode, Algo algo,
                                               Schedule schedule) {
  if (clients.empty()) throw ArgumentError("run_round: no clients");
  check_shape(mdp, server.global_policy);
  const auto start = std::chrono::steady_clock::now();
  const std::size_t K = clients.size();
  std::vector<LocalResult> results(K);

  auto work = [&](std::size_t k) {
    VoteMode client_mode = mode;
    client_mode.sample_seed = derive_seed(mode.sample_seed, k, static_cast<std::uint64_t>(server.round));
    results[k] = local_update(clients[k], server.global_policy, server.global_q, client_mode, algo);
  };

  switch (schedule) {
    case Schedule::Sequential:
      for (std::size_t k = 0; k < K; ++k) work(k);
      break;
    case Schedule::Reverse:
      for (std::size_t k = K; k-- > 0;) work(k);
      break;
    case Schedule::Parallel: {
      std::vector<std::thread> threads;
      threads.reserve(K);
      for (std::size_t k = 0; k < K; ++k) threads.emplace_back(work, k);
      for (auto& t : threads) t.join();
      break;
    }
  }

  std::vector<Policy> policies;
  std::vector<QTable> qtables;
  for (const auto& r : results) {
    policies.push_back(r.policy);
    qtables.push_back(r.q);
  }
  auto [pi_bar, q_bar] = aggregate(policies, qtables);

  ServerState next;
  next.global_policy = std::move(pi_bar);
  next.global_q = std::move(q_bar);
  next.round = server.round + 1;

  RoundMetrics m;
  m.round = server.round;
  m.j_global = expected_return(mdp, next.global_policy);
  const OccupancyMeasure d_global = occupancy_measure(mdp, next.global_policy);
  for (std::size_t k = 0; k < K; ++k) {
    m.j_clients.push_back(expected_return(mdp, policies[k]));
    const Policy global_floored = next.global_policy.min_prob() > 0.0
                                      ? next.global_policy
                                      : next.global_policy.with_floor(clients[k].params.zeta > 0.0
                                                                          ? clients[k].params.zeta
                                                                          : 1e-6);
    m.kl_local_global.push_back(divergence(policies[k], global_floored, d_global, DivergenceKind::KL));
    m.tv_local_global.push_back(divergence(policies[k], next.global_policy, d_global, DivergenceKind::TV));
    for (const auto& w : results[k].warnings) m.warnings.push_back("client " + std::to_string(k) + ": " + w);
  }
  m.j_client_mean = mean(m.j_clients);
  m.wallclock = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start);
  return {std::move(next), std::move(m)};
}

TrainingResult run_training(const MdpSpec& mdp, const std::vector<Dataset>& federation, const HyperParams& params,
                            int rounds, const VoteMode& mode, Algo algo, Schedule schedule) {
  if (rounds < 1) throw ConfigError("run_training: rounds must be at least 1");
  params.validate();
  if (params.gamma != mdp.gamma) throw ConfigError("hyper.gamma must equal mdp.gamma");
  TrainingResult t;
  t.server = initial_server(mdp);
  t.clients = make_clients(mdp, federation, params, t.server.global_policy);
  t.global_policies.push_back(t.server.global_policy);
  continue_training(t, mdp, rounds, mode, algo, schedule);
  return t;
}

void continue_training(TrainingResult& state, const MdpSpec& mdp, int rounds, const VoteMode& mode, Algo algo,
                       Schedule schedule) {
  for (int r = 0; r < rounds; ++r) {
    auto [next, metrics] = run_round(state.server, state.clients, mdp, mode, algo, schedule);
    state.server = std::move(next);
    state.global_policies.push_back(state.server.global_policy);
    state.history.push_back(std::move(metrics));
  }
}

std::string metrics_csv_header(int n_clients) {
  std::string h = "round,j_global,j_client_mean";
  for (int k = 0; k < n_clients; ++k) h += ",j_client_" + std::to_string(k);
  h += ",kl_mean,tv_mean";
  return h;
}

std::string metrics_csv_row(const RoundMetrics& m) {
  std::string row = std::to_string(m.round) + "," + format_double(m.j_global) + "," + format_double(m.j_client_mean);
  for (double j : m.j_clients) row += "," + format_double(j);
  row += "," + format_double(m.kl_mean()) + "," + format_double(m.tv_mean());
  return row;
}

std::string metrics_csv(const std::vector<RoundMetrics>& history) {
  const int k = history.empty() ? 0 : static_cast<int>(history.front().j_clients.size());
  std::string out = metrics_csv_header(k) + "\n";
  for (const auto& m : history) out += metrics_csv_row(m) + "\n";
  return out;
}

Json to_json(const ServerState& server) {
  Json j;
  j["version"] = kSchemaVersion;
  j["round"] = server.round;
  j["global_policy"] = to_json(server.global_policy);
  j["global_q"] = to_json(server.global_q.values);
  return j;
}

ServerState server_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("global_policy") || !j.contains("global_q") || !j.contains("round"))
    throw ConfigError("checkpoint: missing round, global_policy or global_q");
  ServerState s;
  s.round = j.at("round").get<int>();
  s.global_policy = policy_from_json(j.at("global_policy"), "checkpoint.global_policy");
  s.global_q.values = matrix_from_json(j.at("global_q"), "checkpoint.global_q");
  return s;
}

}  // namespace fova
