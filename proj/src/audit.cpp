#include "fova/audit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fova/errors.hpp"

namespace fova {

namespace {

double mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

bool deterministic_dynamics(const MdpSpec& mdp) {
  for (Eigen::Index r = 0; r < mdp.transition.rows(); ++r)
    if (mdp.transition.row(r).maxCoeff() != 1.0) return false;
  return true;
}

Matrix advantage(const MdpSpec& mdp, const Policy& policy) {
  const Evaluation e = exact_policy_evaluation(mdp, policy);
  return e.q.values.colwise() - e.v.values;
}

}  // namespace

ConcentrationConstants hoeffding_constants(const MdpSpec& mdp, double reward_noise_std, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("hoeffding_constants: delta must lie in (0,1)");
  const double log_term = std::log(2.0 / delta);
  ConcentrationConstants c;
  if (reward_noise_std > 0.0) c.c_r = 2.0 * mdp.r_max * std::sqrt(log_term / 2.0);
  if (!deterministic_dynamics(mdp)) c.c_t = std::sqrt(2.0 * mdp.n_states * log_term);
  return c;
}

double combined_constant(const ConcentrationConstants& c, double gamma, double r_max) {
  return c.c_r + 2.0 * gamma * r_max * c.c_t / (1.0 - gamma);
}

double alpha_threshold(const Dataset& data, const Policy& vote, const Policy& behavior, double c_r, double c_t,
                       double gamma, double r_max) {
  const double C = combined_constant({c_r, c_t}, gamma, r_max);
  if (C == 0.0) return 0.0;
  const Eigen::VectorXi visits = data.counts_s();
  double worst = 0.0;
  for (int s = 0; s < data.n_states(); ++s) {
    if (visits[s] == 0) continue;
    const double d = d_vcql(vote, behavior, s);
    if (d == 0.0) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, C * r_max / ((1.0 - gamma) * std::sqrt(static_cast<double>(visits[s]))) / d);
  }
  return worst;
}

ConservatismResult conservatism_audit(const ClientState& client, const Policy& global_pi, const VoteMode& mode,
                                      const MdpSpec* reference, double tol) {
  ConservatismResult r;
  r.eval = vcql_evaluate(client, global_pi, mode);
  const MdpSpec model = reference != nullptr ? *reference : client.empirical.as_mdp();
  r.v_reference = exact_policy_evaluation(model, r.eval.vote).v.values;
  const Eigen::VectorXi visits = client.data.counts_s();
  for (int s = 0; s < model.n_states; ++s) {
    const bool visited = visits[s] > 0;
    const double excess = r.eval.v.values[s] - r.v_reference[s];
    const bool ok = !visited || excess <= tol * (1.0 + std::abs(r.v_reference[s]));
    r.visited.push_back(visited);
    r.pass.push_back(ok);
    if (visited) r.worst_violation = std::max(r.worst_violation, excess);
    r.all_pass = r.all_pass && ok;
  }
  return r;
}

XiTerms return_gap_xi(const Dataset& data, const EmpiricalMdp& empirical, const Policy& policy,
                      const Policy& behavior, const ConcentrationConstants& c, double coverage_delta) {
  if (data.size() == 0) throw DomainError("return_gap_xi: empty dataset");
  const double gamma = empirical.gamma;
  const double n = static_cast<double>(data.size());
  const int A = data.n_actions();
  const OccupancyMeasure occ = occupancy_measure(empirical.as_mdp(), policy);
  const double floor_count = coverage_delta * n;

  XiTerms x;
  double trans = 0.0;
  double reward = 0.0;
  for (int s = 0; s < data.n_states(); ++s) {
    const double ds = occ.state_dist[s];
    if (ds == 0.0) continue;
    trans += ds * std::sqrt((1.0 + d_vcql(policy, behavior, s)) * A / n);
    for (int a = 0; a < A; ++a) {
      const double pa = policy(s, a);
      if (pa == 0.0) continue;
      double count = data.counts_sa()(s, a);
      if (count == 0.0) {
        count = floor_count;
        x.used_coverage_floor = true;
      }
      reward += ds * pa / std::sqrt(count);
    }
  }
  x.transition_term = 2.0 * gamma * empirical.r_max * c.c_t / ((1.0 - gamma) * (1.0 - gamma)) * trans;
  x.reward_term = c.c_r / (1.0 - gamma) * reward;
  x.total = x.transition_term + x.reward_term;
  return x;
}

double sigma_term(double alpha, double coverage_delta, double gamma) {
  if (alpha == 0.0) return 0.0;
  return 2.0 * alpha / (coverage_delta * (1.0 - gamma));
}

GapResult improvement_gap(const MdpSpec& mdp, const Policy& learned, const Policy& behavior, const Policy& target,
                          const BoundReport& report, GapLevel level, double lambda, double beta,
                          const Vector& state_weights) {
  GapResult g;
  g.lhs = expected_return(mdp, learned) - expected_return(mdp, behavior);
  const double kl_tb = divergence(target, behavior, state_weights, DivergenceKind::KL);
  if (level == GapLevel::Global) {
    g.rhs = beta * kl_tb - report.sigma - report.xi_b - report.xi_bar;
  } else {
    const double kl_tl = divergence(target, learned, state_weights, DivergenceKind::KL);
    g.rhs = lambda * kl_tl + beta * kl_tb - 3.0 * report.sigma - report.xi_b - 2.0 * report.xi_bar - report.xi_tilde;
  }
  g.holds = g.lhs >= g.rhs;
  return g;
}

BoundReport bound_report(const ClientState& client, const Policy& global_pi, const VoteMode& mode,
                         const MdpSpec& mdp, const ConcentrationConstants& c, const Policy& behavior) {
  const HyperParams& p = client.params;
  const EmpiricalMdp& emp = client.empirical;
  BoundReport r;
  r.c_r_delta = c.c_r;
  r.c_t_delta = c.c_t;
  r.alpha = p.alpha;
  r.coverage_delta = emp.min_coverage;

  const ConservatismResult cons = conservatism_audit(client, global_pi, mode);
  const VcqlResult& eval = cons.eval;
  r.alpha_threshold = alpha_threshold(client.data, eval.vote, client.behavior, c.c_r, c.c_t, emp.gamma, emp.r_max);
  const Policy target = awr_target(eval.q, eval.v, client.behavior, p.beta);

  const XiTerms xi_tilde = return_gap_xi(client.data, emp, client.local_policy, client.behavior, c, emp.min_coverage);
  const XiTerms xi_bar = return_gap_xi(client.data, emp, target, client.behavior, c, emp.min_coverage);
  const XiTerms xi_b = return_gap_xi(client.data, emp, behavior, client.behavior, c, emp.min_coverage);
  r.xi_tilde = xi_tilde.total;
  r.xi_bar = xi_bar.total;
  r.xi_b = xi_b.total;
  r.used_coverage_floor = xi_tilde.used_coverage_floor || xi_bar.used_coverage_floor || xi_b.used_coverage_floor;
  r.sigma = sigma_term(p.alpha, emp.min_coverage, emp.gamma);

  const Vector weights = client.data.state_distribution();
  r.kl_target_local = divergence(target, client.local_policy, weights, DivergenceKind::KL);
  r.kl_target_behavior = divergence(target, behavior, weights, DivergenceKind::KL);
  const GapResult local =
      improvement_gap(mdp, client.local_policy, behavior, target, r, GapLevel::Local, p.lambda, p.beta, weights);
  const GapResult global = improvement_gap(mdp, target, behavior, target, r, GapLevel::Global, p.lambda, p.beta, weights);
  r.local_gap_lhs = local.lhs;
  r.local_gap_lower = local.rhs;
  r.global_gap_lhs = global.lhs;
  r.global_gap_lower = global.rhs;

  const double j_emp = expected_return(emp.as_mdp(), client.local_policy);
  const double j_true = expected_return(mdp, client.local_policy);
  r.holds_empirically["conservatism"] = cons.all_pass;
  r.holds_empirically["return_gap"] = std::abs(j_emp - j_true) <= r.xi_tilde;
  r.holds_empirically["global_improvement"] = global.holds;
  r.holds_empirically["local_improvement"] = local.holds;
  return r;
}

HeterogeneityReport heterogeneity_norm(const std::vector<Policy>& behaviors, const std::vector<MdpSpec>& dynamics,
                                       const Policy& policy, double zeta) {
  const std::size_t K = behaviors.size();
  if (K == 0 || dynamics.size() != K) throw ArgumentError("heterogeneity_norm: need one dynamics per behavior");
  const double floor = zeta > 0.0 ? zeta : 1e-6;
  HeterogeneityReport r;
  std::vector<Vector> occ(K);
  std::vector<Matrix> adv(K);
  for (std::size_t k = 0; k < K; ++k) {
    occ[k] = occupancy_measure(dynamics[k], behaviors[k]).state_dist;
    if (occ[k].minCoeff() < floor) r.used_occupancy_floor = true;
    occ[k] = occ[k].cwiseMax(floor);
    adv[k] = advantage(dynamics[k], policy);
  }
  const double gamma = dynamics.front().gamma;
  const double scale = 2.0 / ((1.0 - gamma) * (1.0 - gamma));
  for (std::size_t k = 0; k < K; ++k) {
    Matrix h = -adv[k];
    for (std::size_t n = 0; n < K; ++n)
      h += (occ[n].cwiseQuotient(occ[k]).asDiagonal() * adv[n]) / static_cast<double>(K);
    const double norm = h.norm();
    r.h_matrices.push_back(std::move(h));
    r.h_norms.push_back(norm);
    r.l_terms.push_back(scale * gamma * adv[k].cwiseAbs().maxCoeff());
    r.h_terms.push_back(scale * norm);
  }
  return r;
}

HeterogeneityReport heterogeneity_norm(const std::vector<ClientState>& clients, const MdpSpec& mdp,
                                       const Policy& policy, bool empirical_dynamics) {
  std::vector<Policy> behaviors;
  std::vector<MdpSpec> dynamics;
  for (const auto& c : clients) {
    behaviors.push_back(make_behavior_policy(mdp, c.data.quality_label()));
    dynamics.push_back(empirical_dynamics ? c.empirical.as_mdp() : mdp);
  }
  return heterogeneity_norm(behaviors, dynamics, policy, clients.empty() ? 0.0 : clients.front().params.zeta);
}

double safe_bound(double lambda, double beta, const HeterogeneityReport& report, const std::vector<double>& xi_next,
                  const std::vector<double>& xi_prev, const std::vector<double>& tv_behavior_global, double sigma) {
  if (!(lambda > 0.0 && beta > 0.0)) throw ConfigError("safe_bound: lambda and beta must be positive");
  const std::size_t K = report.l_terms.size();
  if (report.h_terms.size() != K || xi_next.size() != K || xi_prev.size() != K || tv_behavior_global.size() != K)
    throw ArgumentError("safe_bound: per-client inputs differ in length");
  std::vector<double> xi_sum(K), drift(K), sq_lambda(K), sq_beta(K);
  for (std::size_t k = 0; k < K; ++k) {
    const double l = report.l_terms[k];
    const double h = report.h_terms[k];
    xi_sum[k] = xi_next[k] + xi_prev[k];
    drift[k] = l * tv_behavior_global[k];
    sq_lambda[k] = (l + h + 2.0 * sigma) * (l + h + 2.0 * sigma);
    sq_beta[k] = (l + h + sigma) * (l + h + sigma);
  }
  return mean(xi_sum) + mean(drift) + mean(sq_lambda) / (8.0 * lambda) + mean(sq_beta) / (8.0 * beta);
}

std::vector<SafeRoundAudit> safe_improvement_audit(const std::vector<ClientState>& clients, const MdpSpec& mdp,
                                                   const std::vector<Policy>& global_policies,
                                                   const ConcentrationConstants& c) {
  if (clients.empty()) throw ArgumentError("safe_improvement_audit: no clients");
  const HyperParams& p = clients.front().params;
  double sigma = 0.0;
  for (const auto& cl : clients) sigma = std::max(sigma, sigma_term(cl.params.alpha, cl.empirical.min_coverage, mdp.gamma));

  std::vector<SafeRoundAudit> out;
  for (std::size_t t = 0; t + 1 < global_policies.size(); ++t) {
    const Policy& prev = global_policies[t];
    const Policy& next = global_policies[t + 1];
    const HeterogeneityReport het = heterogeneity_norm(clients, mdp, prev);
    std::vector<double> xi_next, xi_prev, tv;
    for (const auto& cl : clients) {
      const double cov = cl.empirical.min_coverage;
      xi_next.push_back(return_gap_xi(cl.data, cl.empirical, next, cl.behavior, c, cov).total);
      xi_prev.push_back(return_gap_xi(cl.data, cl.empirical, prev, cl.behavior, c, cov).total);
      tv.push_back(divergence(cl.behavior, prev, cl.data.state_distribution(), DivergenceKind::TV));
    }
    SafeRoundAudit a;
    a.round = static_cast<int>(t);
    a.j_prev = expected_return(mdp, prev);
    a.j_next = expected_return(mdp, next);
    a.bound = safe_bound(p.lambda, p.beta, het, xi_next, xi_prev, tv, sigma);
    a.holds = a.j_next - a.j_prev >= -a.bound;
    out.push_back(a);
  }
  return out;
}

Json to_json(const BoundReport& r) {
  Json j;
  j["alpha_threshold"] = r.alpha_threshold;
  j["xi_tilde"] = r.xi_tilde;
  j["xi_bar"] = r.xi_bar;
  j["xi_b"] = r.xi_b;
  j["sigma"] = r.sigma;
  j["c_r_delta"] = r.c_r_delta;
  j["c_t_delta"] = r.c_t_delta;
  j["alpha"] = r.alpha;
  j["coverage_delta"] = r.coverage_delta;
  j["kl_target_local"] = r.kl_target_local;
  j["kl_target_behavior"] = r.kl_target_behavior;
  j["local_gap_lhs"] = r.local_gap_lhs;
  j["local_gap_lower"] = r.local_gap_lower;
  j["global_gap_lhs"] = r.global_gap_lhs;
  j["global_gap_lower"] = r.global_gap_lower;
  j["used_coverage_floor"] = r.used_coverage_floor;
  Json holds = Json::object();
  for (const auto& [k, v] : r.holds_empirically) holds[k] = v;
  j["holds_empirically"] = std::move(holds);
  return j;
}

Json to_json(const HeterogeneityReport& r) {
  Json j;
  Json mats = Json::array();
  for (const auto& h : r.h_matrices) mats.push_back(to_json(h));
  j["h_matrices"] = std::move(mats);
  j["h_norms"] = r.h_norms;
  j["l_terms"] = r.l_terms;
  j["h_terms"] = r.h_terms;
  j["safe_bound"] = r.safe_bound;
  j["used_occupancy_floor"] = r.used_occupancy_floor;
  return j;
}

}  // namespace fova
