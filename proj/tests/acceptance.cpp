// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "fova/audit.hpp"
#include "fova/harness.hpp"
#include "support.hpp"

using namespace fova;
using fova::testing::covering_dataset;
using fova::testing::random_deterministic_mdp;
using fova::testing::random_policy;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

MdpSpec grid4() { return make_gridworld(4, 4, 0.1, 1.0, 0.9); }

ExperimentConfig grid_config(std::vector<double> qualities, int n_transitions = 2000) {
  ExperimentConfig c;
  c.mdp.width = 4;
  c.mdp.height = 4;
  c.mdp.slip = 0.1;
  c.federation.n_clients = static_cast<int>(qualities.size());
  c.federation.qualities = std::move(qualities);
  c.federation.n_transitions = n_transitions;
  c.federation.horizon = 50;
  return c;
}

// 1. alpha = 0 with every candidate equal reduces to policy evaluation on M~.
Outcome oracle_equivalence() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(derive_seed(seed, 1));
    const int S = 2 + static_cast<int>(seed % 5);
    const int A = 2 + static_cast<int>(seed % 3);
    const double gamma = 0.5 + 0.45 * rng.uniform();
    const MdpSpec mdp = make_random_mdp(S, A, gamma, 1.0, seed);
    const Dataset data = covering_dataset(mdp, 20, rng);
    HyperParams p;
    p.alpha = 0.0;
    p.gamma = gamma;
    p.eval_tol = 1e-13;
    const Policy pi = random_policy(S, A, rng);
    ClientState client = make_client(data, mdp, p, pi);
    client.behavior = pi;
    client.local_policy = pi;
    const VcqlResult r = vcql_evaluate(client, pi, VoteMode{});
    const Evaluation oracle = exact_policy_evaluation(client.empirical.as_mdp(), pi);
    worst = std::max(worst, (r.q.values - oracle.q.values).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-8, fmt("max |Q_vcql - Q_oracle| = %.2e over 50 MDPs", worst)};
}

// 2. Conservatism on exact models and at the alpha threshold under noise.
Outcome conservatism() {
  int exact_fail = 0;
  int exact_runs = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(derive_seed(seed, 2));
    const MdpSpec mdp = seed % 2 == 0 ? random_deterministic_mdp(3 + static_cast<int>(seed % 4), 3, 0.9, rng)
                                      : make_gridworld(3, 3, 0.0, 1.0, 0.9);
    const Dataset data = covering_dataset(mdp, 5, rng);
    for (double alpha : {0.1, 1.0, 5.0}) {
      HyperParams p;
      p.alpha = alpha;
      const Policy global = random_policy(mdp.n_states, mdp.n_actions, rng);
      ClientState client = make_client(data, mdp, p, global);
      // Tolerance covers rounding only (violations seen are ~1e-14).
      const ConservatismResult r = conservatism_audit(client, global, VoteMode{}, &mdp, 1e-12);
      exact_fail += !r.all_pass;
      ++exact_runs;
    }
  }

  // Three-state ring with noisy rewards; c_t = 0 since the dynamics are
  // deterministic, so the threshold is driven by the reward constant.
  MdpSpec ring;
  ring.n_states = 3;
  ring.n_actions = 2;
  ring.gamma = 0.9;
  ring.r_max = 1.0;
  ring.transition = Matrix::Zero(6, 3);
  ring.reward = Matrix(3, 2);
  for (int s = 0; s < 3; ++s)
    for (int a = 0; a < 2; ++a) {
      ring.transition(ring.row(s, a), (s + 1) % 3) = 1.0;
      ring.reward(s, a) = a == 0 ? 0.5 : -0.5;
    }
  ring.initial_dist = Vector::Constant(3, 1.0 / 3.0);
  const double noise = 0.2;
  const double delta = 0.05;
  const ConcentrationConstants c = hoeffding_constants(ring, noise, delta);
  const Policy global = Policy::deterministic({0, 0, 0}, 2).with_floor(1e-3);
  const Policy uniform = Policy::uniform(3, 2);
  int noisy_pass = 0;
  double alpha_sum = 0.0;
  for (std::uint64_t trial = 0; trial < 200; ++trial) {
    const Dataset data = collect_dataset(ring, uniform, 4000, 100, derive_seed(trial, 22), 0.0, noise);
    HyperParams p;
    p.alpha = 0.0;
    p.delta_conf = delta;
    ClientState client = make_client(data, ring, p, global);
    Policy vote = vcql_evaluate(client, global, VoteMode{}).vote;
    for (int round = 0; round < 5; ++round) {
      client.params.alpha = alpha_threshold(data, vote, client.behavior, c.c_r, c.c_t, ring.gamma, ring.r_max);
      const Policy next = vcql_evaluate(client, global, VoteMode{}).vote;
      if (next == vote) break;
      vote = next;
    }
    alpha_sum += client.params.alpha;
    noisy_pass += conservatism_audit(client, global, VoteMode{}, &ring).all_pass;
  }
  const bool ok = exact_fail == 0 && noisy_pass >= 190;
  return {ok, fmt("exact-model failures %d/%d; noisy pass %d/200 at mean alpha %.3f", exact_fail, exact_runs,
                  noisy_pass, alpha_sum / 200.0)};
}

// 3. Closed-form target.
Outcome closed_form() {
  double worst_norm = 0.0;
  bool shift_exact = true;
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const int S = 4, A = 3;
    Matrix q(S, A);
    Vector v(S), c(S);
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) q(s, a) = std::floor(rng.uniform(-64.0, 64.0)) / 8.0;
      v[s] = std::floor(rng.uniform(-64.0, 64.0)) / 8.0;
      c[s] = std::floor(rng.uniform(-100.0, 100.0));
    }
    const Policy beh = random_policy(S, A, rng);
    const double beta = 0.5 + 4.0 * rng.uniform();
    const Policy t = awr_target({q}, {v}, beh, beta);
    worst_norm = std::max(worst_norm, (t.probs().rowwise().sum().array() - 1.0).abs().maxCoeff());
    Matrix shifted = q;
    for (int s = 0; s < S; ++s) shifted.row(s).array() += c[s];
    shift_exact = shift_exact && awr_target({shifted}, {v}, beh, beta) == t;
  }
  Matrix q(1, 2);
  q << std::log(2.0), 0.0;
  const Policy hand = awr_target({q}, {Vector::Zero(1)}, Policy::uniform(1, 2), 1.0);
  const double hand_err = std::max(std::abs(hand(0, 0) - 2.0 / 3.0), std::abs(hand(0, 1) - 1.0 / 3.0));
  const bool ok = worst_norm < 1e-10 && shift_exact && hand_err < 1e-12;
  return {ok, fmt("row-sum error %.1e; shift invariance %s; hand instance error %.1e", worst_norm,
                  shift_exact ? "exact" : "broken", hand_err)};
}

// 4. The lambda term alone projects onto the closed-form target.
Outcome projection() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(seed, 4));
    const int S = 3 + static_cast<int>(seed % 3), A = 2 + static_cast<int>(seed % 3);
    const MdpSpec mdp = make_random_mdp(S, A, 0.9, 1.0, seed);
    const Dataset data = covering_dataset(mdp, 3 + static_cast<int>(seed % 5), rng);
    HyperParams p;
    p.smoothing = 0.0;
    p.zeta = 0.0;
    p.q_term_weight = 0.0;
    p.improve_steps = 3000;
    p.lambda = 0.5 + 10.0 * rng.uniform();
    p.beta = 0.5 + 5.0 * rng.uniform();
    ClientState client = make_client(data, mdp, p, random_policy(S, A, rng));
    Matrix q(S, A);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) q(s, a) = rng.uniform(-3.0, 3.0);
    const QTable qt{q};
    const ValueTable vt{(client.local_policy.probs().array() * q.array()).rowwise().sum().matrix()};
    const ImproveResult r = awr_improve(client, qt, vt);
    const Policy target = awr_target(qt, vt, estimate_behavior_policy(data, 0.0), p.beta);
    worst = std::max(worst, (r.policy.probs() - target.probs()).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-4, fmt("max |pi_improve - pi_target| = %.2e over 20 instances", worst)};
}

// 5. Analytic gradient of the local objective against central differences.
Outcome gradient_check() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(derive_seed(seed, 5));
    const int S = 2 + static_cast<int>(seed % 4), A = 2 + static_cast<int>(seed % 3);
    const MdpSpec mdp = make_random_mdp(S, A, 0.9, 1.0, seed);
    const Dataset data = collect_dataset(mdp, Policy::uniform(S, A), 200, 20, seed);
    Matrix q(S, A), z(S, A);
    Vector v(S);
    for (int s = 0; s < S; ++s) {
      v[s] = rng.uniform(-2.0, 2.0);
      for (int a = 0; a < A; ++a) {
        q(s, a) = rng.uniform(-3.0, 3.0);
        z(s, a) = rng.uniform(-2.0, 2.0);
      }
    }
    const AwrObjective obj = make_awr_objective(data, {q}, {v}, 0.5 + 5.0 * rng.uniform(),
                                                0.5 + 5.0 * rng.uniform(), rng.uniform(0.0, 2.0));
    const Matrix g = obj.gradient(z);
    Matrix fd(S, A);
    const double h = 1e-5;
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        Matrix zp = z, zm = z;
        zp(s, a) += h;
        zm(s, a) -= h;
        fd(s, a) = (obj.value(zp) - obj.value(zm)) / (2.0 * h);
      }
    worst = std::max(worst, (g - fd).norm() / std::max({g.norm(), fd.norm(), 1e-12}));
  }
  return {worst < 1e-5, fmt("max relative error %.2e over 50 instances", worst)};
}

// 6. Empirical-vs-true return gap against xi.
Outcome return_gap() {
  int pass = 0;
  for (std::uint64_t trial = 0; trial < 200; ++trial) {
    Rng rng(derive_seed(trial, 6));
    const int S = 3 + static_cast<int>(trial % 3), A = 2 + static_cast<int>(trial % 2);
    const double noise = 0.1 + 0.4 * rng.uniform();
    const MdpSpec mdp = make_random_mdp(S, A, 0.9, 1.0, derive_seed(trial, 60));
    const Policy behavior = random_policy(S, A, rng, 0.2);
    const Dataset data = collect_dataset(mdp, behavior, 300 + static_cast<int>(trial % 5) * 200, 30,
                                         derive_seed(trial, 61), 0.0, noise);
    HyperParams p;
    const ClientState client = make_client(data, mdp, p, Policy::uniform(S, A));
    const ConcentrationConstants c = hoeffding_constants(mdp, noise, 0.05);
    const Policy pi = random_policy(S, A, rng);
    const double xi =
        return_gap_xi(data, client.empirical, pi, client.behavior, c, client.empirical.min_coverage).total;
    const double gap = std::abs(expected_return(client.empirical.as_mdp(), pi) - expected_return(mdp, pi));
    pass += gap <= xi;
  }
  return {pass >= 190, fmt("bound held in %d/200 trials", pass)};
}

// 7. Improvement gaps hold on the audit suite; strict improvement on expert data.
Outcome improvement() {
  const MdpSpec mdp = grid4();
  const ConcentrationConstants c = hoeffding_constants(mdp, 0.0, 0.05);
  int checked = 0, failed = 0;
  const std::vector<std::vector<double>> suites{{1.0}, {0.5}, {1.0, 1.0, 0.0, 0.0}};
  for (const auto& qualities : suites)
    for (double lambda : {1.0, 5.0, 25.0})
      for (double beta : {1.0, 5.0, 25.0}) {
        ExperimentConfig cfg = grid_config(qualities, 1000);
        cfg.hyper.lambda = lambda;
        cfg.hyper.beta = beta;
        const auto phases = generate_phases(cfg, mdp, 7);
        const TrainingResult t = run_training(mdp, phases[0], cfg.hyper, 5, VoteMode{}, Algo::Fova);
        for (const auto& client : t.clients) {
          const BoundReport r = bound_report(client, t.server.global_policy, VoteMode{}, mdp, c, client.behavior);
          checked += 2;
          failed += !r.holds_empirically.at("global_improvement");
          failed += !r.holds_empirically.at("local_improvement");
        }
      }
  int strict = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ExperimentConfig cfg = grid_config({1.0});
    cfg.hyper.lambda = 25.0;
    cfg.hyper.beta = 25.0;
    const auto phases = generate_phases(cfg, mdp, seed);
    const TrainingResult t = run_training(mdp, phases[0], cfg.hyper, 10, VoteMode{}, Algo::Fova);
    const ClientState& client = t.clients.front();
    strict += expected_return(mdp, client.local_policy) > expected_return(mdp, client.behavior);
  }
  return {failed == 0 && strict >= 45,
          fmt("gap checks failed %d/%d; strict improvement on %d/50 expert seeds", failed, checked, strict)};
}

// 8. Mixed-quality robustness.
Outcome mixed_quality() {
  const MdpSpec mdp = grid4();
  int beats_cql = 0, beats_no_vote = 0;
  double mean_fova = 0.0, mean_cql = 0.0, mean_nv = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ExperimentConfig cfg = grid_config({1.0, 1.0, 0.0, 0.0});
    const auto phases = generate_phases(cfg, mdp, seed);
    const VoteMode mode{VoteKind::ExpectedQ, seed};
    const double j_fova = run_training(mdp, phases[0], cfg.hyper, 30, mode, Algo::Fova).history.back().j_global;
    const double j_cql = run_training(mdp, phases[0], cfg.hyper, 30, mode, Algo::CqlFl).history.back().j_global;
    const double j_nv = run_training(mdp, phases[0], cfg.hyper, 30, mode, Algo::FovaNoVote).history.back().j_global;
    beats_cql += j_fova >= j_cql;
    beats_no_vote += j_fova >= j_nv;
    mean_fova += j_fova / 20.0;
    mean_cql += j_cql / 20.0;
    mean_nv += j_nv / 20.0;
  }
  return {beats_cql >= 16 && beats_no_vote >= 14,
          fmt("FOVA >= CQL_FL on %d/20, >= NO_VOTE on %d/20 (mean J %.3f / %.3f / %.3f)", beats_cql, beats_no_vote,
              mean_fova, mean_cql, mean_nv)};
}

// 9. Server policy versus the mean client policy.
Outcome consistency() {
  const MdpSpec mdp = grid4();
  int ok = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ExperimentConfig cfg = grid_config({0.5, 0.5, 0.5, 0.5});
    const auto phases = generate_phases(cfg, mdp, seed);
    const TrainingResult t = run_training(mdp, phases[0], cfg.hyper, 30, VoteMode{VoteKind::ExpectedQ, seed}, Algo::Fova);
    for (const auto& m : t.history) {
      ok += m.j_global >= m.j_client_mean - 0.05 * std::abs(m.j_client_mean);
      ++total;
    }
  }
  return {ok >= 0.8 * total, fmt("j_global within 5%% of j_client_mean in %d/%d rounds", ok, total)};
}

// 10. Heterogeneity vanishes for IID clients; safe-improvement bound holds.
Outcome heterogeneity_safety() {
  const MdpSpec mdp = grid4();
  const ConcentrationConstants c = hoeffding_constants(mdp, 0.0, 0.05);
  double iid_max = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto phases = generate_phases(grid_config({0.5, 0.5, 0.5, 0.5}, 1000), mdp, seed);
    const TrainingResult t = run_training(mdp, phases[0], HyperParams{}, 3, VoteMode{}, Algo::Fova);
    const HeterogeneityReport h = heterogeneity_norm(t.clients, mdp, t.server.global_policy);
    for (double n : h.h_norms) iid_max = std::max(iid_max, n);
  }
  int rounds = 0, violations = 0;
  HeterogeneityReport last;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto phases = generate_phases(grid_config({1.0, 1.0, 0.0, 0.0}, 1000), mdp, seed);
    const TrainingResult t = run_training(mdp, phases[0], HyperParams{}, 10, VoteMode{}, Algo::Fova);
    for (const auto& a : safe_improvement_audit(t.clients, mdp, t.global_policies, c)) {
      ++rounds;
      violations += !a.holds;
    }
    last = heterogeneity_norm(t.clients, mdp, t.server.global_policy);
  }
  const std::vector<double> xi(last.l_terms.size(), 0.5), tv(last.l_terms.size(), 0.1);
  const double sigma = 0.3;
  const double b = safe_bound(5.0, 5.0, last, xi, xi, tv, sigma);
  const bool monotone = safe_bound(10.0, 5.0, last, xi, xi, tv, sigma) < b &&
                        safe_bound(5.0, 10.0, last, xi, xi, tv, sigma) < b &&
                        safe_bound(5.0, 5.0, last, xi, xi, tv, sigma) == b;
  const bool ok = iid_max < 1e-9 && violations == 0 && monotone;
  return {ok, fmt("IID max ||H_k||_F %.1e; safe-bound violations %d/%d rounds; B monotone in lambda, beta: %s",
                  iid_max, violations, rounds, monotone ? "yes" : "no")};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 11. Determinism of the pipeline and of client scheduling.
Outcome determinism() {
  const MdpSpec mdp = grid4();
  const ExperimentConfig cfg = grid_config({1.0, 0.5, 0.0}, 1000);
  const auto phases = generate_phases(cfg, mdp, 11);
  bool schedules_equal = true;
  for (VoteKind kind : {VoteKind::ExpectedQ, VoteKind::SampledQ}) {
    const VoteMode mode{kind, 11};
    const TrainingResult a = run_training(mdp, phases[0], cfg.hyper, 5, mode, Algo::Fova, Schedule::Sequential);
    for (Schedule s : {Schedule::Reverse, Schedule::Parallel}) {
      const TrainingResult b = run_training(mdp, phases[0], cfg.hyper, 5, mode, Algo::Fova, s);
      schedules_equal = schedules_equal && metrics_csv(a.history) == metrics_csv(b.history) &&
                        a.server.global_policy == b.server.global_policy &&
                        a.server.global_q.values == b.server.global_q.values;
    }
  }

  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "fova_acceptance_determinism";
  fs::remove_all(root);
  ExperimentConfig pipeline = grid_config({1.0, 0.0}, 500);
  pipeline.rounds = 3;
  pipeline.seeds = {0, 1};
  for (const char* run : {"a", "b"}) {
    const fs::path out = root / run;
    pipeline.algo = Algo::Fova;
    cmd_generate(pipeline, out);
    for (Algo algo : {Algo::Fova, Algo::CqlFl}) {
      pipeline.algo = algo;
      cmd_train(pipeline, out);
      cmd_audit(pipeline, out);
    }
    cmd_report(out);
  }
  int files = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path other = root / "b" / fs::relative(e.path(), root / "a");
    differing += !fs::exists(other) || slurp(e.path()) != slurp(other);
  }
  fs::remove_all(root);
  return {schedules_equal && differing == 0 && files > 0,
          fmt("schedules identical: %s; %d/%d pipeline files differ across reruns", schedules_equal ? "yes" : "no",
              differing, files)};
}

// 12. PER/BWT exactness and the L2-on-Q continual variant.
Outcome continual() {
  Matrix a(2, 2);
  a << 3.0, 0.0, 2.0, 4.0;
  const PerBwt hand = per_bwt(a);
  const bool exact = hand.per == 3.0 && hand.bwt == -1.0;

  const MdpSpec mdp = grid4();
  ExperimentConfig cfg = grid_config({1.0, 1.0, 1.0, 1.0}, 1000);
  cfg.quality_schedule = std::vector<std::vector<double>>{{1, 1, 1, 1}, {0.5, 0.5, 0.5, 0.5}, {0, 0, 0, 0}};
  int wins = 0;
  bool recomputable = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto phases = generate_phases(cfg, mdp, seed);
    const VoteMode mode{VoteKind::ExpectedQ, seed};
    HyperParams vanilla = cfg.hyper;
    HyperParams l2 = cfg.hyper;
    l2.l2_q_weight = 1.0;
    const ExperimentRun rv = run_experiment(mdp, phases, vanilla, 10, mode, Algo::Fova);
    const ExperimentRun rl = run_experiment(mdp, phases, l2, 10, mode, Algo::Fova);
    wins += rl.summary.bwt >= rv.summary.bwt;
    const PerBwt again = per_bwt(rl.scores);
    recomputable = recomputable && again.per == rl.summary.per && again.bwt == rl.summary.bwt;
  }
  return {exact && recomputable && wins >= 12,
          fmt("hand K=2 (PER %g, BWT %g); L2 BWT >= vanilla on %d/20 seeds", hand.per, hand.bwt, wins)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 oracle equivalence", oracle_equivalence},
      {"2 conservatism", conservatism},
      {"3 closed-form target", closed_form},
      {"4 projection equivalence", projection},
      {"5 gradient check", gradient_check},
      {"6 return-gap audit", return_gap},
      {"7 improvement gaps", improvement},
      {"8 mixed-quality robustness", mixed_quality},
      {"9 server/client consistency", consistency},
      {"10 heterogeneity and safety", heterogeneity_safety},
      {"11 determinism", determinism},
      {"12 PER/BWT and continual L2", continual},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s criterion %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
