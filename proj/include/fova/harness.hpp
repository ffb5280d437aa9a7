#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fova/audit.hpp"
#include "fova/federation.hpp"
#include "fova/serialization.hpp"

namespace fova {

struct MdpConfig {
  std::string kind = "gridworld";  // "gridworld" or "random"
  int width = 4;
  int height = 4;
  int n_states = 5;
  int n_actions = 3;
  double gamma = 0.9;
  double slip = 0.1;
  /// Goal reward for grid worlds, reward bound for random MDPs.
  double r_max = 1.0;
  std::uint64_t seed = 0;
};

struct FederationBlock {
  int n_clients = 4;
  /// One quality label per client; all 1 when omitted.
  std::vector<double> qualities{1.0, 1.0, 1.0, 1.0};
  int n_transitions = 2000;
  int horizon = 50;
  double reward_noise_std = 0.0;
};

struct ExperimentConfig {
  MdpConfig mdp;
  FederationBlock federation;
  HyperParams hyper;
  int rounds = 30;
  Algo algo = Algo::Fova;
  VoteKind vote_mode = VoteKind::ExpectedQ;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "out";
  /// Continual mode: per phase, one quality label per client.
  std::optional<std::vector<std::vector<double>>> quality_schedule;

  bool continual() const { return quality_schedule.has_value(); }
  int n_phases() const { return continual() ? static_cast<int>(quality_schedule->size()) : 1; }
  /// Quality labels of every client in `phase`.
  const std::vector<double>& phase_qualities(int phase) const;
};

/// Parses and validates JSON text. Unknown keys and out-of-range values
/// raise ConfigError naming the offending path (e.g. `hyper.gamma`).
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical form with every field written out.
Json serialize_config(const ExperimentConfig& config);

MdpSpec build_mdp(const MdpConfig& config);

/// Per-client generation spec for (seed, phase). Client seeds are derived
/// from the experiment seed so that phases and clients are independent.
FederationConfig federation_for(const ExperimentConfig& config, std::uint64_t seed, int phase);

/// Datasets for every phase of one seed.
std::vector<std::vector<Dataset>> generate_phases(const ExperimentConfig& config, const MdpSpec& mdp,
                                                  std::uint64_t seed);

struct PerBwt {
  double per = 0.0;
  /// NaN when there is a single phase.
  double bwt = 0.0;
};

/// PER = mean_k a(K,k); BWT = mean_{k<K} (a(K,k) - a(k,k)) using the lower
/// triangle of the K x K score matrix.
PerBwt per_bwt(const Matrix& scores);

struct ExperimentRun {
  TrainingResult training;
  /// scores(i, j): global policy after phase i evaluated on phase j.
  Matrix scores;
  PerBwt summary;
};

/// a(i,j) = sum_s d_j(s) V^{pi_i}(s) with d_j the pooled state distribution of
/// phase j's datasets.
double phase_score(const MdpSpec& mdp, const Policy& policy, const std::vector<Dataset>& phase);

/// Trains through every phase, swapping client datasets between phases while
/// carrying each client's (Q, pi) forward. With one phase this is plain
/// run_training.
ExperimentRun run_experiment(const MdpSpec& mdp, const std::vector<std::vector<Dataset>>& phases,
                             const HyperParams& params, int rounds, const VoteMode& mode, Algo algo,
                             Schedule schedule = Schedule::Sequential);

VoteMode vote_mode_for(const ExperimentConfig& config, std::uint64_t seed);

/// CLI commands. All paths are rooted at `out`.
Json cmd_generate(const ExperimentConfig& config, const std::filesystem::path& out);
void cmd_train(const ExperimentConfig& config, const std::filesystem::path& out);
void cmd_audit(const ExperimentConfig& config, const std::filesystem::path& out);
void cmd_report(const std::filesystem::path& out);

/// Mean and population standard deviation per column.
struct ColumnStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};
ColumnStats column_stats(const std::vector<std::vector<double>>& rows_by_seed);

}  // namespace fova
