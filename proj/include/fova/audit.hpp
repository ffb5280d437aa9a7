#pragma once

#include <map>
#include <string>
#include <vector>

#include "fova/federation.hpp"
#include "fova/learner.hpp"
#include "fova/serialization.hpp"

namespace fova {

/// Concentration constants for rewards and transitions.
struct ConcentrationConstants {
  double c_r = 0.0;
  double c_t = 0.0;
};

/// Hoeffding-style calibration at confidence delta:
///   c_r = reward_range * sqrt(log(2/delta)/2)   (0 when rewards are logged exactly)
///   c_t = sqrt(2 |S| log(2/delta))              (0 when every transition row is one-hot)
/// Noisy rewards are clipped to [-r_max, r_max], so reward_range = 2 r_max.
ConcentrationConstants hoeffding_constants(const MdpSpec& mdp, double reward_noise_std, double delta);

/// C_{r,T} = c_r + 2 gamma r_max c_t / (1 - gamma).
double combined_constant(const ConcentrationConstants& c, double gamma, double r_max);

/// max over visited s of C_{r,T} r_max / ((1-gamma) sqrt(N(s))) / D_VCQL(s).
/// 0 when C_{r,T} = 0; +infinity when D_VCQL(s) = 0 at some visited state
/// while C_{r,T} > 0.
double alpha_threshold(const Dataset& data, const Policy& vote, const Policy& behavior, double c_r, double c_t,
                       double gamma, double r_max);

struct ConservatismResult {
  /// One flag per state; unvisited states pass vacuously.
  std::vector<bool> pass;
  std::vector<bool> visited;
  double worst_violation = 0.0;
  bool all_pass = true;
  VcqlResult eval;
  /// V of the final vote policy on the reference model.
  Vector v_reference;
};

/// Runs the evaluation and compares V-hat with the exact value of the final
/// vote policy on the empirical model (or on `reference` when given).
ConservatismResult conservatism_audit(const ClientState& client, const Policy& global_pi, const VoteMode& mode,
                                      const MdpSpec* reference = nullptr, double tol = 1e-9);

struct XiTerms {
  double transition_term = 0.0;
  double reward_term = 0.0;
  double total = 0.0;
  /// True when `policy` puts mass on a pair absent from the data and the
  /// coverage floor N = coverage_delta * |D| was substituted.
  bool used_coverage_floor = false;
};

/// Return-gap bound:
///   (2 gamma r_max c_t/(1-gamma)^2) E_{s~d_pi}[sqrt((1 + D_VCQL(pi, behavior)(s)) |A| / |D|)]
///   + (c_r/(1-gamma)) E_{s~d_pi, a~pi}[1/sqrt(N(s,a))]
/// with d_pi the occupancy of `policy` on the empirical model.
XiTerms return_gap_xi(const Dataset& data, const EmpiricalMdp& empirical, const Policy& policy,
                      const Policy& behavior, const ConcentrationConstants& c, double coverage_delta);

struct BoundReport {
  double alpha_threshold = 0.0;
  double xi_tilde = 0.0;
  double xi_bar = 0.0;
  double xi_b = 0.0;
  double sigma = 0.0;
  double c_r_delta = 0.0;
  double c_t_delta = 0.0;
  double alpha = 0.0;
  double coverage_delta = 0.0;
  double kl_target_local = 0.0;
  double kl_target_behavior = 0.0;
  double local_gap_lhs = 0.0;
  double local_gap_lower = 0.0;
  double global_gap_lhs = 0.0;
  double global_gap_lower = 0.0;
  bool used_coverage_floor = false;
  std::map<std::string, bool> holds_empirically;
};

enum class GapLevel { Local, Global };

struct GapResult {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

/// lhs = J(M, learned) - J(M, behavior). rhs is
///   global: beta KL(target, behavior) - sigma - xi_b - xi_bar
///   local:  lambda KL(target, learned) + beta KL(target, behavior)
///           - 3 sigma - xi_b - 2 xi_bar - xi_tilde
/// with sigma = 2 alpha / (delta (1-gamma)) and KL weighted by `state_weights`.
GapResult improvement_gap(const MdpSpec& mdp, const Policy& learned, const Policy& behavior, const Policy& target,
                          const BoundReport& report, GapLevel level, double lambda, double beta,
                          const Vector& state_weights);

/// sigma = 2 alpha / (delta (1 - gamma)).
double sigma_term(double alpha, double coverage_delta, double gamma);

/// Full per-client report: evaluation, closed-form target, xi terms and both
/// improvement gaps against the true MDP. `behavior` is the policy the gaps
/// are measured against; the coverage delta is the dataset's realized
/// minimum N(s,a)/|D|.
BoundReport bound_report(const ClientState& client, const Policy& global_pi, const VoteMode& mode,
                         const MdpSpec& mdp, const ConcentrationConstants& c, const Policy& behavior);

struct HeterogeneityReport {
  std::vector<Matrix> h_matrices;
  std::vector<double> h_norms;
  std::vector<double> l_terms;
  std::vector<double> h_terms;
  double safe_bound = 0.0;
  bool used_occupancy_floor = false;
};

/// H_k = sum_n (1/K) Lambda_k^{-1} Lambda_n A_n - A_k with Lambda_k the
/// occupancy of behaviors[k] on dynamics[k] (floored at zeta before
/// inversion) and A_k the advantage of `policy` on dynamics[k].
HeterogeneityReport heterogeneity_norm(const std::vector<Policy>& behaviors, const std::vector<MdpSpec>& dynamics,
                                       const Policy& policy, double zeta);

/// Client-set wrapper: behaviors are the logging mixtures recovered from each
/// dataset's quality label; dynamics are the true MDP, or each client's
/// empirical model when `empirical_dynamics` is set.
HeterogeneityReport heterogeneity_norm(const std::vector<ClientState>& clients, const MdpSpec& mdp,
                                       const Policy& policy, bool empirical_dynamics = false);

/// B = mean(xi_next + xi_prev) + mean(l_k tv_k) + mean((l_k + h_k + 2 sigma)^2)/(8 lambda)
///     + mean((l_k + h_k + sigma)^2)/(8 beta).
double safe_bound(double lambda, double beta, const HeterogeneityReport& report, const std::vector<double>& xi_next,
                  const std::vector<double>& xi_prev, const std::vector<double>& tv_behavior_global, double sigma);

struct SafeRoundAudit {
  int round = 0;
  double j_prev = 0.0;
  double j_next = 0.0;
  double bound = 0.0;
  bool holds = false;
};

/// Checks J(M, pi^{t+1}) - J(M, pi^t) >= -B for every consecutive pair of
/// global policies in `global_policies`.
std::vector<SafeRoundAudit> safe_improvement_audit(const std::vector<ClientState>& clients, const MdpSpec& mdp,
                                                   const std::vector<Policy>& global_policies,
                                                   const ConcentrationConstants& c);

Json to_json(const BoundReport& r);
Json to_json(const HeterogeneityReport& r);

}  // namespace fova
