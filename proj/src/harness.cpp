#include "fova/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include "fova/errors.hpp"
#include "fova/rng.hpp"

namespace fova {

namespace fs = std::filesystem;

namespace {

std::string join_path(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Block {
 public:
  Block(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError((path_.empty() ? "config" : path_) + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const Json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string where(const std::string& key) const { return join_path(path_, key); }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(where(key) + ": expected a number");
    return v.get<double>();
  }

  long long integer(const std::string& key, long long fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(where(key) + ": expected an integer");
    return v.get<long long>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(where(key) + ": expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(where(key) + ": expected a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key) {
    const Json& v = at(key);
    if (!v.is_array()) throw ConfigError(where(key) + ": expected an array");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(where(key) + "[" + std::to_string(i) + "]: expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError(where(item.key()) + ": unknown key");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

int to_int(long long v, const std::string& where) {
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw ConfigError(where + ": out of range");
  return static_cast<int>(v);
}

void check_qualities(const std::vector<double>& qs, int n_clients, const std::string& where) {
  require(static_cast<int>(qs.size()) == n_clients,
          where + ": expected " + std::to_string(n_clients) + " entries, one per client");
  for (std::size_t i = 0; i < qs.size(); ++i)
    require(qs[i] >= 0.0 && qs[i] <= 1.0, where + "[" + std::to_string(i) + "] must lie in [0,1]");
}

MdpConfig parse_mdp(const Json& j) {
  Block b(j, "mdp");
  MdpConfig m;
  m.kind = b.string("kind", m.kind);
  require(m.kind == "gridworld" || m.kind == "random", "mdp.kind must be `gridworld` or `random`");
  if (m.kind == "gridworld") {
    m.width = to_int(b.integer("width", m.width), "mdp.width");
    m.height = to_int(b.integer("height", m.height), "mdp.height");
    m.slip = b.number("slip", m.slip);
    require(m.width >= 1 && m.height >= 1 && m.width * m.height >= 2, "mdp.width * mdp.height must be at least 2");
    require(m.slip >= 0.0 && m.slip < 1.0, "mdp.slip must lie in [0,1)");
  } else {
    m.n_states = to_int(b.integer("n_states", m.n_states), "mdp.n_states");
    m.n_actions = to_int(b.integer("n_actions", m.n_actions), "mdp.n_actions");
    const long long seed = b.integer("seed", 0);
    require(seed >= 0, "mdp.seed must be nonnegative");
    m.seed = static_cast<std::uint64_t>(seed);
    require(m.n_states >= 1, "mdp.n_states must be at least 1");
    require(m.n_actions >= 1, "mdp.n_actions must be at least 1");
  }
  m.gamma = b.number("gamma", m.gamma);
  m.r_max = b.number("r_max", m.r_max);
  require(m.gamma > 0.0 && m.gamma < 1.0, "mdp.gamma must lie in (0,1)");
  require(m.r_max > 0.0, "mdp.r_max must be positive");
  b.finish();
  return m;
}

FederationBlock parse_federation(const Json& j) {
  Block b(j, "federation");
  FederationBlock f;
  f.n_clients = to_int(b.integer("n_clients", f.n_clients), "federation.n_clients");
  require(f.n_clients >= 1, "federation.n_clients must be at least 1");
  if (b.has("qualities")) {
    f.qualities = b.numbers("qualities");
    check_qualities(f.qualities, f.n_clients, "federation.qualities");
  } else {
    f.qualities.assign(f.n_clients, 1.0);
  }
  f.n_transitions = to_int(b.integer("n_transitions", f.n_transitions), "federation.n_transitions");
  f.horizon = to_int(b.integer("horizon", f.horizon), "federation.horizon");
  f.reward_noise_std = b.number("reward_noise_std", f.reward_noise_std);
  require(f.n_transitions >= 1, "federation.n_transitions must be at least 1");
  require(f.horizon >= 1, "federation.horizon must be at least 1");
  require(f.reward_noise_std >= 0.0, "federation.reward_noise_std must be nonnegative");
  b.finish();
  return f;
}

HyperParams parse_hyper(const Json& j, double mdp_gamma) {
  Block b(j, "hyper");
  HyperParams h;
  h.alpha = b.number("alpha", h.alpha);
  h.beta = b.number("beta", h.beta);
  h.lambda = b.number("lambda", h.lambda);
  h.gamma = b.number("gamma", mdp_gamma);
  h.delta_conf = b.number("delta_conf", h.delta_conf);
  h.zeta = b.number("zeta", h.zeta);
  h.eval_tol = b.number("eval_tol", h.eval_tol);
  h.eval_max_iter = to_int(b.integer("eval_max_iter", h.eval_max_iter), "hyper.eval_max_iter");
  h.vote_freeze_iter = to_int(b.integer("vote_freeze_iter", h.vote_freeze_iter), "hyper.vote_freeze_iter");
  h.improve_steps = to_int(b.integer("improve_steps", h.improve_steps), "hyper.improve_steps");
  h.improve_lr = b.number("improve_lr", h.improve_lr);
  h.l2_q_weight = b.number("l2_q_weight", h.l2_q_weight);
  h.q_term_weight = b.number("q_term_weight", h.q_term_weight);
  h.smoothing = b.number("smoothing", h.smoothing);
  h.coverage_delta = b.number("coverage_delta", h.coverage_delta);
  b.finish();
  h.validate();
  require(h.gamma == mdp_gamma, "hyper.gamma must equal mdp.gamma");
  return h;
}

Json hyper_json(const HyperParams& h) {
  Json j;
  j["alpha"] = h.alpha;
  j["beta"] = h.beta;
  j["lambda"] = h.lambda;
  j["gamma"] = h.gamma;
  j["delta_conf"] = h.delta_conf;
  j["zeta"] = h.zeta;
  j["eval_tol"] = h.eval_tol;
  j["eval_max_iter"] = h.eval_max_iter;
  j["vote_freeze_iter"] = h.vote_freeze_iter;
  j["improve_steps"] = h.improve_steps;
  j["improve_lr"] = h.improve_lr;
  j["l2_q_weight"] = h.l2_q_weight;
  j["q_term_weight"] = h.q_term_weight;
  j["smoothing"] = h.smoothing;
  j["coverage_delta"] = h.coverage_delta;
  return j;
}

std::string vote_tag(VoteKind k) { return k == VoteKind::ExpectedQ ? "expected_q" : "sampled_q"; }

fs::path data_dir(const fs::path& out, const ExperimentConfig& config, std::uint64_t seed, int phase) {
  fs::path d = out / ("seed_" + std::to_string(seed));
  if (config.continual()) d /= "phase_" + std::to_string(phase);
  return d;
}

fs::path run_dir(const fs::path& out, Algo algo, std::uint64_t seed) {
  return out / algo_tag(algo) / ("seed_" + std::to_string(seed));
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

MdpSpec load_mdp(const ExperimentConfig& config, const fs::path& out) {
  const fs::path path = out / "mdp.json";
  if (!fs::exists(path)) throw IoError("missing MDP file: " + path.string() + " (run `generate` first)");
  MdpSpec mdp = mdp_from_json(read_json_file(path));
  const MdpSpec expected = build_mdp(config.mdp);
  if (mdp.n_states != expected.n_states || mdp.n_actions != expected.n_actions || mdp.gamma != expected.gamma)
    throw ConfigError(path.string() + ": MDP shape or gamma differs from the config");
  return mdp;
}

std::vector<std::vector<Dataset>> load_phases(const ExperimentConfig& config, const fs::path& out,
                                              std::uint64_t seed, const MdpSpec& mdp) {
  std::vector<std::vector<Dataset>> phases;
  for (int p = 0; p < config.n_phases(); ++p) {
    std::vector<Dataset> clients;
    for (int k = 0; k < config.federation.n_clients; ++k) {
      const fs::path csv = data_dir(out, config, seed, p) / ("client_" + std::to_string(k) + ".csv");
      fs::path sidecar = csv;
      sidecar.replace_extension(".json");
      if (!fs::exists(csv)) throw IoError("missing dataset file: " + csv.string());
      if (!fs::exists(sidecar)) throw IoError("missing dataset sidecar: " + sidecar.string());
      const Json meta = read_json_file(sidecar);
      if (!meta.contains("quality_label") || !meta.contains("seed"))
        throw ConfigError(sidecar.string() + ": missing quality_label or seed");
      clients.push_back(read_dataset_csv(csv, mdp.n_states, mdp.n_actions, meta.at("quality_label").get<double>(),
                                         meta.at("seed").get<std::uint64_t>()));
    }
    phases.push_back(std::move(clients));
  }
  return phases;
}

std::string matrix_csv(const Matrix& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ",";
      out += format_double(m(i, j));
    }
    out += "\n";
  }
  return out;
}

Json number_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

// Returns rows of (j_global, j_client_mean) from a metrics CSV.
std::vector<std::pair<double, double>> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read metrics file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty metrics file: " + path.string());
  const auto header = split(line);
  const auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IoError(path.string() + ": missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t jg = col("j_global");
  const std::size_t jc = col("j_client_mean");
  std::vector<std::pair<double, double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw IoError(path.string() + ": ragged row");
    try {
      rows.emplace_back(std::stod(cells[jg]), std::stod(cells[jc]));
    } catch (const std::exception&) {
      throw IoError(path.string() + ": malformed number in row `" + line + "`");
    }
  }
  return rows;
}

}  // namespace

const std::vector<double>& ExperimentConfig::phase_qualities(int phase) const {
  if (!continual()) return federation.qualities;
  return quality_schedule->at(static_cast<std::size_t>(phase));
}

ExperimentConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  Block b(j, "");
  if (b.has("version")) {
    const Json& v = b.at("version");
    require(v.is_number_integer() && v.get<int>() == kSchemaVersion,
            "version: unsupported schema version (expected " + std::to_string(kSchemaVersion) + ")");
  }
  ExperimentConfig c;
  if (b.has("mdp")) c.mdp = parse_mdp(b.at("mdp"));
  if (b.has("federation")) c.federation = parse_federation(b.at("federation"));
  c.hyper = b.has("hyper") ? parse_hyper(b.at("hyper"), c.mdp.gamma) : parse_hyper(Json::object(), c.mdp.gamma);
  c.rounds = to_int(b.integer("rounds", c.rounds), "rounds");
  require(c.rounds >= 1, "rounds must be at least 1");
  const std::string algo = b.string("algo", algo_tag(c.algo));
  try {
    c.algo = parse_algo(algo);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("algo: ") + e.what());
  }
  const std::string vote = b.string("vote_mode", vote_tag(c.vote_mode));
  if (vote == "expected_q")
    c.vote_mode = VoteKind::ExpectedQ;
  else if (vote == "sampled_q")
    c.vote_mode = VoteKind::SampledQ;
  else
    throw ConfigError("vote_mode must be `expected_q` or `sampled_q`");
  if (b.has("seeds")) {
    const Json& s = b.at("seeds");
    require(s.is_array() && !s.empty(), "seeds: expected a nonempty array");
    c.seeds.clear();
    for (std::size_t i = 0; i < s.size(); ++i) {
      require(s[i].is_number_unsigned(), "seeds[" + std::to_string(i) + "]: expected a nonnegative integer");
      c.seeds.push_back(s[i].get<std::uint64_t>());
    }
    require(std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() == c.seeds.size(),
            "seeds: duplicate entries");
  }
  c.output_dir = b.string("output_dir", c.output_dir);
  if (b.has("quality_schedule")) {
    const Json& qs = b.at("quality_schedule");
    require(qs.is_array() && !qs.empty(), "quality_schedule: expected a nonempty array of phases");
    std::vector<std::vector<double>> phases;
    for (std::size_t p = 0; p < qs.size(); ++p) {
      const std::string where = "quality_schedule[" + std::to_string(p) + "]";
      require(qs[p].is_array(), where + ": expected an array of per-client qualities");
      std::vector<double> phase;
      for (std::size_t k = 0; k < qs[p].size(); ++k) {
        require(qs[p][k].is_number(), where + "[" + std::to_string(k) + "]: expected a number");
        phase.push_back(qs[p][k].get<double>());
      }
      check_qualities(phase, c.federation.n_clients, where);
      phases.push_back(std::move(phase));
    }
    c.quality_schedule = std::move(phases);
  }
  b.finish();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

Json serialize_config(const ExperimentConfig& c) {
  Json j;
  j["version"] = kSchemaVersion;
  Json m;
  m["kind"] = c.mdp.kind;
  if (c.mdp.kind == "gridworld") {
    m["width"] = c.mdp.width;
    m["height"] = c.mdp.height;
    m["slip"] = c.mdp.slip;
  } else {
    m["n_states"] = c.mdp.n_states;
    m["n_actions"] = c.mdp.n_actions;
    m["seed"] = c.mdp.seed;
  }
  m["gamma"] = c.mdp.gamma;
  m["r_max"] = c.mdp.r_max;
  j["mdp"] = std::move(m);
  Json f;
  f["n_clients"] = c.federation.n_clients;
  f["qualities"] = c.federation.qualities;
  f["n_transitions"] = c.federation.n_transitions;
  f["horizon"] = c.federation.horizon;
  f["reward_noise_std"] = c.federation.reward_noise_std;
  j["federation"] = std::move(f);
  j["hyper"] = hyper_json(c.hyper);
  j["rounds"] = c.rounds;
  j["algo"] = algo_tag(c.algo);
  j["vote_mode"] = vote_tag(c.vote_mode);
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  if (c.quality_schedule) j["quality_schedule"] = *c.quality_schedule;
  return j;
}

MdpSpec build_mdp(const MdpConfig& c) {
  if (c.kind == "gridworld") return make_gridworld(c.width, c.height, c.slip, c.r_max, c.gamma);
  if (c.kind == "random") return make_random_mdp(c.n_states, c.n_actions, c.gamma, c.r_max, c.seed);
  throw ConfigError("mdp.kind must be `gridworld` or `random`");
}

FederationConfig federation_for(const ExperimentConfig& config, std::uint64_t seed, int phase) {
  FederationConfig f;
  f.n_clients = config.federation.n_clients;
  f.horizon = config.federation.horizon;
  f.reward_noise_std = config.federation.reward_noise_std;
  const auto& qualities = config.phase_qualities(phase);
  for (int k = 0; k < f.n_clients; ++k) {
    ClientDataSpec spec;
    spec.quality = qualities[static_cast<std::size_t>(k)];
    spec.n_transitions = config.federation.n_transitions;
    spec.seed = derive_seed(seed, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(phase));
    f.per_client.push_back(spec);
  }
  return f;
}

std::vector<std::vector<Dataset>> generate_phases(const ExperimentConfig& config, const MdpSpec& mdp,
                                                  std::uint64_t seed) {
  std::vector<std::vector<Dataset>> phases;
  for (int p = 0; p < config.n_phases(); ++p) phases.push_back(make_federation(mdp, federation_for(config, seed, p)));
  return phases;
}

PerBwt per_bwt(const Matrix& a) {
  if (a.rows() < 1 || a.rows() != a.cols()) throw ArgumentError("per_bwt: expected a nonempty square matrix");
  const Eigen::Index K = a.rows();
  PerBwt r;
  double per = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) per += a(K - 1, k);
  r.per = per / static_cast<double>(K);
  if (K == 1) {
    r.bwt = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  double bwt = 0.0;
  for (Eigen::Index k = 0; k + 1 < K; ++k) bwt += a(K - 1, k) - a(k, k);
  r.bwt = bwt / static_cast<double>(K - 1);
  return r;
}

double phase_score(const MdpSpec& mdp, const Policy& policy, const std::vector<Dataset>& phase) {
  Vector weights = Vector::Zero(mdp.n_states);
  for (const auto& d : phase) weights += d.counts_s().cast<double>();
  const double total = weights.sum();
  if (total <= 0.0) throw DomainError("phase_score: phase has no transitions");
  return (weights / total).dot(exact_policy_evaluation(mdp, policy).v.values);
}

ExperimentRun run_experiment(const MdpSpec& mdp, const std::vector<std::vector<Dataset>>& phases,
                             const HyperParams& params, int rounds, const VoteMode& mode, Algo algo,
                             Schedule schedule) {
  if (phases.empty()) throw ArgumentError("run_experiment: no phases");
  ExperimentRun run;
  run.training = run_training(mdp, phases.front(), params, rounds, mode, algo, schedule);
  std::vector<Policy> after_phase{run.training.server.global_policy};
  for (std::size_t p = 1; p < phases.size(); ++p) {
    auto& clients = run.training.clients;
    if (phases[p].size() != clients.size()) throw ArgumentError("run_experiment: client count changes between phases");
    for (std::size_t k = 0; k < clients.size(); ++k) {
      ClientState next = make_client(phases[p][k], mdp, params, run.training.server.global_policy);
      next.local_policy = clients[k].local_policy;
      next.local_q = clients[k].local_q;
      next.prev_q = clients[k].local_q;
      clients[k] = std::move(next);
    }
    continue_training(run.training, mdp, rounds, mode, algo, schedule);
    after_phase.push_back(run.training.server.global_policy);
  }
  const auto K = static_cast<Eigen::Index>(phases.size());
  run.scores = Matrix::Zero(K, K);
  for (Eigen::Index i = 0; i < K; ++i)
    for (Eigen::Index j = 0; j < K; ++j) run.scores(i, j) = phase_score(mdp, after_phase[i], phases[j]);
  run.summary = per_bwt(run.scores);
  return run;
}

VoteMode vote_mode_for(const ExperimentConfig& config, std::uint64_t seed) {
  return VoteMode{config.vote_mode, seed};
}

Json cmd_generate(const ExperimentConfig& config, const fs::path& out) {
  make_dirs(out);
  const MdpSpec mdp = build_mdp(config.mdp);
  write_json_file(to_json(mdp), out / "mdp.json");

  Json manifest;
  manifest["version"] = kSchemaVersion;
  manifest["mdp"] = "mdp.json";
  manifest["config"] = serialize_config(config);
  Json seeds = Json::array();
  for (std::uint64_t seed : config.seeds) {
    const auto phases = generate_phases(config, mdp, seed);
    Json seed_entry;
    seed_entry["seed"] = seed;
    Json phase_list = Json::array();
    for (int p = 0; p < config.n_phases(); ++p) {
      const fs::path dir = data_dir(out, config, seed, p);
      make_dirs(dir);
      Json clients = Json::array();
      for (std::size_t k = 0; k < phases[p].size(); ++k) {
        const Dataset& d = phases[p][k];
        const std::string stem = "client_" + std::to_string(k);
        write_dataset_csv(d, dir / (stem + ".csv"));
        Json meta;
        meta["version"] = kSchemaVersion;
        meta["quality_label"] = d.quality_label();
        meta["seed"] = d.seed();
        meta["n"] = d.size();
        meta["mdp"] = "mdp.json";
        write_json_file(meta, dir / (stem + ".json"));
        Json entry;
        entry["file"] = fs::relative(dir / (stem + ".csv"), out).generic_string();
        entry["quality_label"] = d.quality_label();
        entry["seed"] = d.seed();
        entry["n"] = d.size();
        clients.push_back(std::move(entry));
      }
      Json phase_entry;
      phase_entry["phase"] = p;
      phase_entry["clients"] = std::move(clients);
      phase_list.push_back(std::move(phase_entry));
    }
    seed_entry["phases"] = std::move(phase_list);
    seeds.push_back(std::move(seed_entry));
  }
  manifest["seeds"] = std::move(seeds);
  write_json_file(manifest, out / "manifest.json");
  return manifest;
}

void cmd_train(const ExperimentConfig& config, const fs::path& out) {
  const MdpSpec mdp = load_mdp(config, out);
  for (std::uint64_t seed : config.seeds) {
    const auto phases = load_phases(config, out, seed, mdp);
    const ExperimentRun run =
        run_experiment(mdp, phases, config.hyper, config.rounds, vote_mode_for(config, seed), config.algo);
    const TrainingResult& t = run.training;
    for (const auto& m : t.history)
      for (const auto& w : m.warnings)
        std::cerr << "warning: seed " << seed << " round " << m.round << ": " << w << "\n";

    const fs::path dir = run_dir(out, config.algo, seed);
    make_dirs(dir);
    write_text_file(metrics_csv(t.history), dir / "metrics.csv");

    Json ckpt;
    ckpt["version"] = kSchemaVersion;
    ckpt["algo"] = algo_tag(config.algo);
    ckpt["seed"] = seed;
    ckpt["server"] = to_json(t.server);
    Json clients = Json::array();
    for (const auto& c : t.clients) {
      Json cj;
      cj["local_policy"] = to_json(c.local_policy);
      cj["local_q"] = to_json(c.local_q.values);
      clients.push_back(std::move(cj));
    }
    ckpt["clients"] = std::move(clients);
    Json globals = Json::array();
    for (const auto& p : t.global_policies) globals.push_back(to_json(p));
    ckpt["global_policies"] = std::move(globals);
    write_json_file(ckpt, dir / "checkpoint.json");

    if (config.continual()) {
      write_text_file(matrix_csv(run.scores), dir / "scores.csv");
      Json cj;
      cj["scores"] = to_json(run.scores);
      cj["per"] = number_or_null(run.summary.per);
      cj["bwt"] = number_or_null(run.summary.bwt);
      write_json_file(cj, dir / "continual.json");
    }
  }
}

void cmd_audit(const ExperimentConfig& config, const fs::path& out) {
  const MdpSpec mdp = load_mdp(config, out);
  const ConcentrationConstants c =
      hoeffding_constants(mdp, config.federation.reward_noise_std, config.hyper.delta_conf);
  for (std::uint64_t seed : config.seeds) {
    const auto phases = load_phases(config, out, seed, mdp);
    const fs::path dir = run_dir(out, config.algo, seed);
    const fs::path ckpt_path = dir / "checkpoint.json";
    if (!fs::exists(ckpt_path)) throw IoError("missing checkpoint: " + ckpt_path.string() + " (run `train` first)");
    const Json ckpt = read_json_file(ckpt_path);
    if (!ckpt.contains("server") || !ckpt.contains("clients") || !ckpt.contains("global_policies"))
      throw ConfigError(ckpt_path.string() + ": missing server, clients or global_policies");
    const ServerState server = server_from_json(ckpt.at("server"));
    try {
      check_shape(mdp, server.global_policy);
    } catch (const std::exception& e) {
      throw ConfigError(ckpt_path.string() + ": " + e.what());
    }

    std::vector<ClientState> clients = make_clients(mdp, phases.back(), config.hyper, server.global_policy);
    const Json& cj = ckpt.at("clients");
    if (!cj.is_array() || cj.size() != clients.size())
      throw ConfigError(ckpt_path.string() + ": client count differs from the config");
    for (std::size_t k = 0; k < clients.size(); ++k) {
      const std::string where = "checkpoint.clients[" + std::to_string(k) + "]";
      Policy pi = policy_from_json(cj[k].at("local_policy"), where + ".local_policy");
      Matrix q = matrix_from_json(cj[k].at("local_q"), where + ".local_q");
      if (pi.n_states() != mdp.n_states || pi.n_actions() != mdp.n_actions || q.rows() != mdp.n_states ||
          q.cols() != mdp.n_actions)
        throw ConfigError(where + ": shape differs from the MDP");
      clients[k].local_policy = std::move(pi);
      clients[k].local_q.values = std::move(q);
    }
    std::vector<Policy> globals;
    for (std::size_t i = 0; i < ckpt.at("global_policies").size(); ++i) {
      Policy p = policy_from_json(ckpt.at("global_policies")[i], "checkpoint.global_policies");
      try {
        check_shape(mdp, p);
      } catch (const std::exception& e) {
        throw ConfigError(ckpt_path.string() + ": " + e.what());
      }
      globals.push_back(std::move(p));
    }
    // Only the rounds of the last phase ran on the datasets loaded above.
    const std::size_t first = globals.size() > static_cast<std::size_t>(config.rounds) + 1
                                  ? globals.size() - static_cast<std::size_t>(config.rounds) - 1
                                  : 0;
    const std::vector<Policy> last_phase(globals.begin() + static_cast<std::ptrdiff_t>(first), globals.end());

    const VoteMode mode = vote_mode_for(config, seed);
    Json report;
    report["version"] = kSchemaVersion;
    report["algo"] = algo_tag(config.algo);
    report["seed"] = seed;
    Json per_client = Json::array();
    bool conservative = true, gap_ok = true, global_ok = true, local_ok = true;
    for (const auto& client : clients) {
      const BoundReport r = bound_report(client, server.global_policy, mode, mdp, c, client.behavior);
      conservative = conservative && r.holds_empirically.at("conservatism");
      gap_ok = gap_ok && r.holds_empirically.at("return_gap");
      global_ok = global_ok && r.holds_empirically.at("global_improvement");
      local_ok = local_ok && r.holds_empirically.at("local_improvement");
      per_client.push_back(to_json(r));
    }
    report["bound_reports"] = std::move(per_client);

    HeterogeneityReport het = heterogeneity_norm(clients, mdp, server.global_policy);
    const auto safe = safe_improvement_audit(clients, mdp, last_phase, c);
    bool safe_ok = true;
    Json rounds = Json::array();
    for (const auto& s : safe) {
      Json sj;
      sj["round"] = s.round;
      sj["j_prev"] = s.j_prev;
      sj["j_next"] = s.j_next;
      sj["bound"] = s.bound;
      sj["holds"] = s.holds;
      rounds.push_back(std::move(sj));
      safe_ok = safe_ok && s.holds;
    }
    if (!safe.empty()) het.safe_bound = safe.back().bound;
    report["heterogeneity"] = to_json(het);
    report["safe_improvement"] = std::move(rounds);

    Json summary;
    summary["conservatism"] = conservative;
    summary["return_gap"] = gap_ok;
    summary["global_improvement"] = global_ok;
    summary["local_improvement"] = local_ok;
    summary["heterogeneity_max_norm"] = het.h_norms.empty() ? 0.0 : *std::max_element(het.h_norms.begin(), het.h_norms.end());
    summary["safe_improvement"] = safe_ok;
    report["summary"] = std::move(summary);
    write_json_file(report, dir / "audit.json");
  }
}

ColumnStats column_stats(const std::vector<std::vector<double>>& rows_by_seed) {
  ColumnStats s;
  if (rows_by_seed.empty()) return s;
  const std::size_t n = rows_by_seed.front().size();
  const double count = static_cast<double>(rows_by_seed.size());
  s.mean.assign(n, 0.0);
  s.stddev.assign(n, 0.0);
  for (const auto& row : rows_by_seed) {
    if (row.size() != n) throw ArgumentError("column_stats: ragged input");
    for (std::size_t i = 0; i < n; ++i) s.mean[i] += row[i];
  }
  for (double& m : s.mean) m /= count;
  for (const auto& row : rows_by_seed)
    for (std::size_t i = 0; i < n; ++i) s.stddev[i] += (row[i] - s.mean[i]) * (row[i] - s.mean[i]);
  for (double& v : s.stddev) v = std::sqrt(v / count);
  return s;
}

void cmd_report(const fs::path& out) {
  if (!fs::is_directory(out)) throw IoError("metrics directory does not exist: " + out.string());
  std::vector<std::string> algos;
  for (const auto& entry : fs::directory_iterator(out)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    try {
      parse_algo(name);
    } catch (const ConfigError&) {
      continue;
    }
    algos.push_back(name);
  }
  std::sort(algos.begin(), algos.end());

  std::string comparison =
      "algo,n_seeds,final_j_global_mean,final_j_global_std,final_j_client_mean_mean,final_j_client_mean_std\n";
  std::vector<std::pair<std::string, std::string>> curves;
  for (const auto& algo : algos) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(out / algo)) {
      const fs::path m = entry.path() / "metrics.csv";
      if (entry.is_directory() && entry.path().filename().string().rfind("seed_", 0) == 0 && fs::exists(m))
        files.push_back(m);
    }
    if (files.empty()) continue;
    std::sort(files.begin(), files.end());
    std::vector<std::vector<double>> jg, jc;
    for (const auto& f : files) {
      const auto rows = read_metrics(f);
      if (rows.empty()) throw IoError("metrics file has no rounds: " + f.string());
      std::vector<double> g, c;
      for (const auto& [a, b] : rows) {
        g.push_back(a);
        c.push_back(b);
      }
      if (!jg.empty() && g.size() != jg.front().size())
        throw IoError("metrics files under " + (out / algo).string() + " have different round counts");
      jg.push_back(std::move(g));
      jc.push_back(std::move(c));
    }
    const ColumnStats sg = column_stats(jg);
    const ColumnStats sc = column_stats(jc);
    std::string curve = "round,j_global_mean,j_global_std,j_client_mean_mean,j_client_mean_std\n";
    for (std::size_t r = 0; r < sg.mean.size(); ++r)
      curve += std::to_string(r) + "," + format_double(sg.mean[r]) + "," + format_double(sg.stddev[r]) + "," +
               format_double(sc.mean[r]) + "," + format_double(sc.stddev[r]) + "\n";
    curves.emplace_back(algo, std::move(curve));
    const std::size_t last = sg.mean.size() - 1;
    comparison += algo + "," + std::to_string(files.size()) + "," + format_double(sg.mean[last]) + "," +
                  format_double(sg.stddev[last]) + "," + format_double(sc.mean[last]) + "," +
                  format_double(sc.stddev[last]) + "\n";
  }
  if (curves.empty()) throw IoError("no metrics found under " + out.string());
  const fs::path dir = out / "report";
  make_dirs(dir);
  for (const auto& [algo, text] : curves) write_text_file(text, dir / ("curves_" + algo + ".csv"));
  write_text_file(comparison, dir / "comparison.csv");
}

}  // namespace fova
