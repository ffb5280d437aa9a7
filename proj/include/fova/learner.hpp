#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fova/data.hpp"
#include "fova/mdp.hpp"
#include "fova/rng.hpp"

namespace fova {

struct HyperParams {
  double alpha = 1.0;
  double beta = 5.0;
  double lambda = 5.0;
  double gamma = 0.9;
  double delta_conf = 0.05;
  double zeta = 1e-6;
  double eval_tol = 1e-10;
  int eval_max_iter = 10000;
  /// After this many evaluation sweeps the vote is frozen at its last value so
  /// the remaining sweeps contract to a fixed point.
  int vote_freeze_iter = 300;
  int improve_steps = 100;
  double improve_lr = 1.0;
  /// alpha_2 of the L2 pull toward the previous phase's Q.
  double l2_q_weight = 0.0;
  /// Weight of the E_{a~pi_k}[Q] term of the local objective.
  double q_term_weight = 1.0;
  /// Additive smoothing for the behavior estimate.
  double smoothing = 0.1;
  double coverage_delta = 1e-3;

  void validate() const;
};

enum class Algo { Fova, CqlFl, FovaNoVote, FovaNoAwr };

std::string algo_tag(Algo algo);
Algo parse_algo(const std::string& tag);

enum class VoteKind { ExpectedQ, SampledQ };

struct VoteMode {
  VoteKind kind = VoteKind::ExpectedQ;
  std::uint64_t sample_seed = 0;
};

enum class Candidate { Local, Behavior, Global };

struct VoteOutcome {
  Candidate winner = Candidate::Behavior;
  Vector action_dist;
};

/// Picks the candidate row with the highest Q score at `state`.
/// expected_q ties go to behavior, then global, then local. In sampled_q
/// mode `rng` supplies one action per candidate; it is required there.
VoteOutcome vote_policy(int state, const QTable& q, const Policy& local, const Policy& behavior,
                        const Policy& global_pi, const VoteMode& mode, Rng* rng = nullptr);

/// sum_a p(a|s) (p(a|s)/q(a|s) - 1); DomainError when q(a|s) == 0.
double d_vcql(const Policy& p, const Policy& q, int state);

struct ClientState {
  Dataset data;
  EmpiricalMdp empirical;
  /// Smoothed behavior estimate with the floor applied.
  Policy behavior;
  Policy local_policy;
  QTable local_q;
  std::optional<QTable> prev_q;
  HyperParams params;
};

/// Builds the empirical model and behavior estimate; pi_k starts at the
/// floored `global_pi`.
ClientState make_client(Dataset data, const MdpSpec& mdp_shape, const HyperParams& params, const Policy& global_pi);

/// Pessimistic value held by pairs absent from the data.
double uncovered_q_value(const EmpiricalMdp& m);

struct VcqlResult {
  QTable q;
  ValueTable v;
  /// The vote used by the last sweep; v = E_vote[q].
  Policy vote;
  std::vector<Candidate> winners;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

/// Fixed-point iteration of the vote-based conservative backup on the
/// client's empirical model, warm-started from client.local_q. With
/// use_vote = false the evaluated policy is pi_k itself.
VcqlResult vcql_evaluate(const ClientState& client, const Policy& global_pi, const VoteMode& mode,
                         bool use_vote = true);

/// behavior * exp((Q - V)/beta) / Z, stabilized per state.
Policy awr_target(const QTable& q, const ValueTable& v, const Policy& behavior, double beta);

/// Local objective over softmax logits z:
///   F(z) = lambda * sum_{s,a} c(s,a) log pi_z(a|s) + w_q * sum_s rho(s) sum_a pi_z(a|s) Q(s,a)
/// with c(s,a) = N(s,a) exp((Q(s,a) - V(s))/beta) / |D| and rho(s) = N(s)/|D|.
struct AwrObjective {
  Matrix weights;
  Vector rho;
  Matrix q;
  double lambda = 1.0;
  double q_weight = 1.0;

  double value(const Matrix& logits) const;
  Matrix gradient(const Matrix& logits) const;
};

AwrObjective make_awr_objective(const Dataset& data, const QTable& q, const ValueTable& v, double lambda, double beta,
                                double q_weight);

Matrix softmax_rows(const Matrix& logits);

struct ImproveResult {
  Policy policy;
  double objective_start = 0.0;
  double objective_end = 0.0;
  int accepted_steps = 0;
  bool backtrack_exhausted = false;
};

/// Gradient ascent on the local objective from log(pi_k), with each state's
/// gradient rescaled by 1/rho(s). A step is accepted only if the objective
/// does not decrease; otherwise the step size halves (at most 20 times).
ImproveResult awr_improve(const ClientState& client, const QTable& q, const ValueTable& v);

struct LocalResult {
  QTable q;
  Policy policy;
  VcqlResult eval;
  std::vector<std::string> warnings;
};

/// One client round: start (Q_k, pi_k) from the global pair, evaluate, improve. Stores
/// the new (Q_k, pi_k) in `client`.
LocalResult local_update(ClientState& client, const Policy& global_pi, const QTable& global_q, const VoteMode& mode,
                         Algo algo = Algo::Fova);

}  // namespace fova
