#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "fova/learner.hpp"
#include "fova/serialization.hpp"

namespace fova {

struct ServerState {
  Policy global_policy;
  QTable global_q;
  int round = 0;
};

struct RoundMetrics {
  int round = 0;
  double j_global = 0.0;
  std::vector<double> j_clients;
  double j_client_mean = 0.0;
  std::vector<double> kl_local_global;
  std::vector<double> tv_local_global;
  std::chrono::nanoseconds wallclock{0};
  std::vector<std::string> warnings;

  double kl_mean() const;
  double tv_mean() const;
};

/// Order in which client updates are executed within a round. Results do not
/// depend on it; it exists so that independence can be tested.
enum class Schedule { Sequential, Reverse, Parallel };

/// Unweighted elementwise means of the policies and Q tables.
std::pair<Policy, QTable> aggregate(const std::vector<Policy>& policies, const std::vector<QTable>& qtables);

/// Distribute, update every client, aggregate, and score against `mdp`.
/// KL/TV between pi_k and the new global policy are weighted by the global
/// policy's occupancy on `mdp`.
std::pair<ServerState, RoundMetrics> run_round(const ServerState& server, std::vector<ClientState>& clients,
                                               const MdpSpec& mdp, const VoteMode& mode, Algo algo,
                                               Schedule schedule = Schedule::Sequential);

/// Uniform global policy and zero global Q.
ServerState initial_server(const MdpSpec& mdp);

std::vector<ClientState> make_clients(const MdpSpec& mdp, const std::vector<Dataset>& federation,
                                      const HyperParams& params, const Policy& global_pi);

struct TrainingResult {
  std::vector<RoundMetrics> history;
  /// Global policy before round 0 followed by the policy after each round.
  std::vector<Policy> global_policies;
  ServerState server;
  std::vector<ClientState> clients;
};

TrainingResult run_training(const MdpSpec& mdp, const std::vector<Dataset>& federation, const HyperParams& params,
                            int rounds, const VoteMode& mode, Algo algo, Schedule schedule = Schedule::Sequential);

/// Continues training from an existing server and client set.
void continue_training(TrainingResult& state, const MdpSpec& mdp, int rounds, const VoteMode& mode, Algo algo,
                       Schedule schedule = Schedule::Sequential);

/// CSV header `round,j_global,j_client_mean,j_client_0..,kl_mean,tv_mean`.
std::string metrics_csv_header(int n_clients);
std::string metrics_csv_row(const RoundMetrics& m);
std::string metrics_csv(const std::vector<RoundMetrics>& history);

Json to_json(const ServerState& server);
ServerState server_from_json(const Json& j);

}  // namespace fova
