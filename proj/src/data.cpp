#include "fova/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fova/errors.hpp"
#include "fova/rng.hpp"

namespace fova {

Dataset::Dataset(int n_states, int n_actions, std::vector<Transition> transitions, double quality_label,
                 std::uint64_t seed)
    : n_states_(n_states),
      n_actions_(n_actions),
      transitions_(std::move(transitions)),
      counts_sa_(Eigen::MatrixXi::Zero(n_states, n_actions)),
      counts_sas_(Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(n_states) * n_actions, n_states)),
      quality_label_(quality_label),
      seed_(seed) {
  for (const auto& t : transitions_) {
    if (t.state < 0 || t.state >= n_states || t.next_state < 0 || t.next_state >= n_states || t.action < 0 ||
        t.action >= n_actions)
      throw ArgumentError("dataset: transition index out of range");
    counts_sa_(t.state, t.action) += 1;
    counts_sas_(static_cast<Eigen::Index>(t.state) * n_actions + t.action, t.next_state) += 1;
  }
}

Vector Dataset::state_distribution() const {
  Vector d = counts_s().cast<double>();
  const double total = d.sum();
  if (total > 0.0) d /= total;
  return d;
}

MdpSpec EmpiricalMdp::as_mdp() const {
  MdpSpec m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.gamma = gamma;
  m.r_max = r_max;
  m.transition = t_hat;
  m.reward = r_hat;
  m.initial_dist = initial_dist;
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a)
      if (!covered_mask(s, a)) {
        m.transition.row(m.row(s, a)).setZero();
        m.transition(m.row(s, a), s) = 1.0;
        m.reward(s, a) = 0.0;
      }
  return m;
}

void FederationConfig::validate() const {
  if (n_clients < 1) throw ConfigError("federation: n_clients must be at least 1");
  if (static_cast<int>(per_client.size()) != n_clients)
    throw ConfigError("federation: per_client length must equal n_clients");
  for (const auto& c : per_client) {
    if (!(c.quality >= 0.0 && c.quality <= 1.0)) throw ConfigError("federation: quality must lie in [0,1]");
    if (c.n_transitions < 1) throw ConfigError("federation: n_transitions must be positive");
  }
  if (horizon < 1) throw ConfigError("federation: horizon must be positive");
  if (reward_noise_std < 0.0) throw ConfigError("federation: reward_noise_std must be nonnegative");
}

Policy make_behavior_policy(const MdpSpec& mdp, double quality, std::uint64_t /*seed*/) {
  if (!(quality >= 0.0 && quality <= 1.0)) throw ConfigError("make_behavior_policy: quality must lie in [0,1]");
  const Policy optimal = solve_optimal(mdp);
  const Matrix uniform = Matrix::Constant(mdp.n_states, mdp.n_actions, 1.0 / mdp.n_actions);
  return Policy(quality * optimal.probs() + (1.0 - quality) * uniform);
}

Dataset collect_dataset(const MdpSpec& mdp, const Policy& behavior, int n, int horizon, std::uint64_t seed,
                        double quality_label, double reward_noise_std) {
  if (n < 1 || horizon < 1) throw ConfigError("collect_dataset: n and horizon must be positive");
  check_shape(mdp, behavior);
  Rng rng(seed);
  std::vector<Transition> out;
  out.reserve(static_cast<std::size_t>(n));
  int state = rng.categorical(mdp.initial_dist);
  int step = 0;
  while (static_cast<int>(out.size()) < n) {
    if (step == horizon) {
      state = rng.categorical(mdp.initial_dist);
      step = 0;
    }
    const int action = rng.categorical(behavior.row(state));
    const int next = rng.categorical(mdp.transition.row(mdp.row(state, action)));
    double reward = mdp.reward(state, action);
    if (reward_noise_std > 0.0)
      reward = std::clamp(reward + reward_noise_std * rng.normal(), -mdp.r_max, mdp.r_max);
    out.push_back({state, action, reward, next});
    state = next;
    ++step;
  }
  return Dataset(mdp.n_states, mdp.n_actions, std::move(out), quality_label, seed);
}

Policy estimate_behavior_policy(const Dataset& data, double smoothing) {
  if (smoothing < 0.0) throw ConfigError("estimate_behavior_policy: smoothing must be nonnegative");
  const int n_actions = data.n_actions();
  Matrix probs(data.n_states(), n_actions);
  for (int s = 0; s < data.n_states(); ++s) {
    const double visits = data.counts_sa().row(s).sum();
    if (visits == 0.0) {
      probs.row(s).setConstant(1.0 / n_actions);
      continue;
    }
    for (int a = 0; a < n_actions; ++a)
      probs(s, a) = (data.counts_sa()(s, a) + smoothing) / (visits + smoothing * n_actions);
  }
  return Policy(std::move(probs));
}

EmpiricalMdp build_empirical_mdp(const Dataset& data, const MdpSpec& mdp_shape, double coverage_delta) {
  if (!(coverage_delta > 0.0 && coverage_delta <= 1.0))
    throw ConfigError("build_empirical_mdp: coverage_delta must lie in (0,1]");
  if (data.size() == 0) throw DomainError("build_empirical_mdp: empty dataset");
  if (data.n_states() != mdp_shape.n_states || data.n_actions() != mdp_shape.n_actions)
    throw ArgumentError("build_empirical_mdp: dataset shape does not match mdp");

  EmpiricalMdp m;
  m.n_states = mdp_shape.n_states;
  m.n_actions = mdp_shape.n_actions;
  m.gamma = mdp_shape.gamma;
  m.r_max = mdp_shape.r_max;
  m.initial_dist = mdp_shape.initial_dist;
  m.coverage_delta = coverage_delta;
  m.t_hat = Matrix::Zero(static_cast<Eigen::Index>(m.n_states) * m.n_actions, m.n_states);
  m.r_hat = Matrix::Zero(m.n_states, m.n_actions);
  m.covered_mask = data.counts_sa().array() > 0;

  for (const auto& t : data.transitions()) m.r_hat(t.state, t.action) += t.reward;
  const double total = static_cast<double>(data.size());
  m.min_coverage = 1.0;
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) {
      const int count = data.counts_sa()(s, a);
      if (count == 0) continue;
      const auto r = static_cast<Eigen::Index>(s) * m.n_actions + a;
      m.t_hat.row(r) = data.counts_sas().row(r).cast<double>() / count;
      m.r_hat(s, a) /= count;
      m.min_coverage = std::min(m.min_coverage, count / total);
    }
  m.coverage_satisfied = m.min_coverage >= coverage_delta;
  return m;
}

std::vector<Dataset> make_federation(const MdpSpec& mdp, const FederationConfig& config) {
  config.validate();
  std::vector<Dataset> out;
  out.reserve(config.per_client.size());
  for (const auto& c : config.per_client) {
    const Policy behavior = make_behavior_policy(mdp, c.quality, c.seed);
    out.push_back(
        collect_dataset(mdp, behavior, c.n_transitions, config.horizon, c.seed, c.quality, config.reward_noise_std));
  }
  return out;
}

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset file: " + path.string());
  out << "s,a,r,s_next\n";
  char buf[64];
  for (const auto& t : data.transitions()) {
    std::snprintf(buf, sizeof(buf), "%.17g", t.reward);
    out << t.state << ',' << t.action << ',' << buf << ',' << t.next_state << '\n';
  }
  if (!out) throw IoError("failed writing dataset file: " + path.string());
}

Dataset read_dataset_csv(const std::filesystem::path& path, int n_states, int n_actions, double quality_label,
                         std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read dataset file: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "s,a,r,s_next")
    throw IoError("dataset file has no `s,a,r,s_next` header: " + path.string());
  std::vector<Transition> transitions;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Transition t;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream row(line);
    if (!(row >> t.state >> c1 >> t.action >> c2 >> t.reward >> c3 >> t.next_state) || c1 != ',' || c2 != ',' ||
        c3 != ',')
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": malformed transition");
    transitions.push_back(t);
  }
  return Dataset(n_states, n_actions, std::move(transitions), quality_label, seed);
}

}  // namespace fova
