#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fova/mdp.hpp"

namespace fova {

struct Transition {
  int state = 0;
  int action = 0;
  double reward = 0.0;
  int next_state = 0;

  friend bool operator==(const Transition&, const Transition&) = default;
};

/// Logged transitions plus exact tallies N(s,a) and N(s,a,s').
/// counts_sas uses the same (S*A) x S row layout as MdpSpec::transition.
class Dataset {
 public:
  Dataset() = default;
  Dataset(int n_states, int n_actions, std::vector<Transition> transitions, double quality_label,
          std::uint64_t seed);

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }
  std::size_t size() const { return transitions_.size(); }
  const std::vector<Transition>& transitions() const { return transitions_; }
  const Eigen::MatrixXi& counts_sa() const { return counts_sa_; }
  const Eigen::MatrixXi& counts_sas() const { return counts_sas_; }
  /// N(s) = sum_a N(s,a).
  Eigen::VectorXi counts_s() const { return counts_sa_.rowwise().sum(); }
  /// Empirical state distribution N(s)/|D|.
  Vector state_distribution() const;

  double quality_label() const { return quality_label_; }
  std::uint64_t seed() const { return seed_; }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.n_states_ == b.n_states_ && a.n_actions_ == b.n_actions_ && a.transitions_ == b.transitions_ &&
           a.quality_label_ == b.quality_label_ && a.seed_ == b.seed_;
  }

 private:
  int n_states_ = 0;
  int n_actions_ = 0;
  std::vector<Transition> transitions_;
  Eigen::MatrixXi counts_sa_;
  Eigen::MatrixXi counts_sas_;
  double quality_label_ = 0.0;
  std::uint64_t seed_ = 0;
};

/// Count-based model induced by a dataset.
struct EmpiricalMdp {
  int n_states = 0;
  int n_actions = 0;
  double gamma = 0.9;
  double r_max = 1.0;
  Vector initial_dist;
  Matrix t_hat;
  Matrix r_hat;
  double coverage_delta = 1.0;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> covered_mask;
  /// min over covered (s,a) of N(s,a)/|D|.
  double min_coverage = 0.0;
  /// min_coverage >= coverage_delta.
  bool coverage_satisfied = false;

  bool covered(int s, int a) const { return covered_mask(s, a); }
  bool fully_covered() const { return covered_mask.all(); }

  /// Complete MdpSpec for exact evaluation on the empirical model.
  /// Uncovered pairs become reward-0 self-loops.
  MdpSpec as_mdp() const;
};

struct ClientDataSpec {
  double quality = 1.0;
  int n_transitions = 1000;
  std::uint64_t seed = 0;
};

struct FederationConfig {
  int n_clients = 1;
  std::vector<ClientDataSpec> per_client;
  std::string mdp_ref = "mdp";
  int horizon = 100;
  /// Standard deviation of Gaussian noise added to logged rewards (0 = exact).
  double reward_noise_std = 0.0;

  void validate() const;
};

/// quality * pi* + (1 - quality) * uniform with pi* = solve_optimal(mdp).
/// The construction is deterministic; `seed` is accepted for interface
/// symmetry with the other factories.
Policy make_behavior_policy(const MdpSpec& mdp, double quality, std::uint64_t seed = 0);

/// Rolls episodes from mu0 under `behavior`, restarting every `horizon`
/// steps, until n transitions are logged. Noisy rewards are clipped to
/// [-r_max, r_max].
Dataset collect_dataset(const MdpSpec& mdp, const Policy& behavior, int n, int horizon, std::uint64_t seed,
                        double quality_label = 0.0, double reward_noise_std = 0.0);

/// (N(s,a) + smoothing) / (N(s) + smoothing |A|); unvisited rows are uniform.
Policy estimate_behavior_policy(const Dataset& data, double smoothing);

/// Count-based estimates; throws DomainError on an empty dataset.
EmpiricalMdp build_empirical_mdp(const Dataset& data, const MdpSpec& mdp_shape, double coverage_delta);

std::vector<Dataset> make_federation(const MdpSpec& mdp, const FederationConfig& config);

/// Line-oriented dataset file: header `s,a,r,s_next`, one transition per line.
void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path, int n_states, int n_actions, double quality_label,
                         std::uint64_t seed);

}  // namespace fova
