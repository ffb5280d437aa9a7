#include "fova/learner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fova/errors.hpp"

namespace fova {

namespace {

constexpr double kMaxExponent = 700.0;

void require(bool ok, const char* message) {
  if (!ok) throw ConfigError(message);
}

Policy floored(const Policy& p, double zeta) { return zeta > 0.0 ? p.with_floor(zeta) : p; }

double row_dot(const Policy& p, const Matrix& q, int s) { return p.row(s).dot(q.row(s)); }

/// Keeps rows of `fallback` at states the dataset never visits.
Policy merge_visited(const Matrix& updated, const Policy& fallback, const Dataset& data) {
  Matrix out = fallback.probs();
  const Eigen::VectorXi visits = data.counts_s();
  for (int s = 0; s < data.n_states(); ++s)
    if (visits[s] > 0) out.row(s) = updated.row(s);
  return Policy(std::move(out));
}

}  // namespace

void HyperParams::validate() const {
  require(alpha >= 0.0, "hyper.alpha must be nonnegative");
  require(beta > 0.0, "hyper.beta must be positive");
  require(lambda > 0.0, "hyper.lambda must be positive");
  require(gamma > 0.0 && gamma < 1.0, "hyper.gamma must lie in (0,1)");
  require(delta_conf > 0.0 && delta_conf < 1.0, "hyper.delta_conf must lie in (0,1)");
  require(zeta >= 0.0, "hyper.zeta must be nonnegative");
  require(eval_tol > 0.0, "hyper.eval_tol must be positive");
  require(eval_max_iter >= 1, "hyper.eval_max_iter must be at least 1");
  require(vote_freeze_iter >= 0, "hyper.vote_freeze_iter must be nonnegative");
  require(improve_steps >= 1, "hyper.improve_steps must be at least 1");
  require(improve_lr > 0.0, "hyper.improve_lr must be positive");
  require(l2_q_weight >= 0.0, "hyper.l2_q_weight must be nonnegative");
  require(q_term_weight >= 0.0, "hyper.q_term_weight must be nonnegative");
  require(smoothing >= 0.0, "hyper.smoothing must be nonnegative");
  require(coverage_delta > 0.0 && coverage_delta <= 1.0, "hyper.coverage_delta must lie in (0,1]");
}

std::string algo_tag(Algo algo) {
  switch (algo) {
    case Algo::Fova: return "fova";
    case Algo::CqlFl: return "cql-fl";
    case Algo::FovaNoVote: return "fova-no-vote";
    case Algo::FovaNoAwr: return "fova-no-awr";
  }
  return "fova";
}

Algo parse_algo(const std::string& tag) {
  for (Algo a : {Algo::Fova, Algo::CqlFl, Algo::FovaNoVote, Algo::FovaNoAwr})
    if (algo_tag(a) == tag) return a;
  throw ConfigError("unknown algorithm `" + tag + "` (expected fova, cql-fl, fova-no-vote or fova-no-awr)");
}

VoteOutcome vote_policy(int state, const QTable& q, const Policy& local, const Policy& behavior,
                        const Policy& global_pi, const VoteMode& mode, Rng* rng) {
  const auto n_actions = q.values.cols();
  if (local.n_actions() != n_actions || behavior.n_actions() != n_actions || global_pi.n_actions() != n_actions ||
      state < 0 || state >= q.values.rows() || state >= local.n_states() || state >= behavior.n_states() ||
      state >= global_pi.n_states())
    throw ArgumentError("vote_policy: shape mismatch");

  const std::pair<Candidate, const Policy*> order[] = {
      {Candidate::Behavior, &behavior}, {Candidate::Global, &global_pi}, {Candidate::Local, &local}};

  VoteOutcome out;
  if (mode.kind == VoteKind::ExpectedQ) {
    double best = -std::numeric_limits<double>::infinity();
    const Policy* best_policy = nullptr;
    for (const auto& [who, policy] : order) {
      const double score = row_dot(*policy, q.values, state);
      if (best_policy == nullptr || score > best) {
        best = score;
        best_policy = policy;
        out.winner = who;
      }
    }
    out.action_dist = best_policy->row(state).transpose();
    return out;
  }

  if (rng == nullptr) throw ArgumentError("vote_policy: sampled_q mode needs a random stream");
  double best = -std::numeric_limits<double>::infinity();
  int best_action = -1;
  for (const auto& [who, policy] : order) {
    const int a = rng->categorical(policy->row(state));
    const double score = q.values(state, a);
    if (best_action < 0 || score > best) {
      best = score;
      best_action = a;
      out.winner = who;
    }
  }
  out.action_dist = Vector::Zero(n_actions);
  out.action_dist[best_action] = 1.0;
  return out;
}

double d_vcql(const Policy& p, const Policy& q, int state) {
  double total = 0.0;
  for (int a = 0; a < p.n_actions(); ++a) {
    const double pa = p(state, a);
    if (pa == 0.0) continue;
    const double qa = q(state, a);
    if (qa <= 0.0)
      throw DomainError("d_vcql: zero denominator at (s=" + std::to_string(state) + ", a=" + std::to_string(a) + ")");
    total += pa * (pa / qa - 1.0);
  }
  return std::max(total, 0.0);
}

ClientState make_client(Dataset data, const MdpSpec& mdp_shape, const HyperParams& params, const Policy& global_pi) {
  params.validate();
  check_shape(mdp_shape, global_pi);
  ClientState c;
  c.empirical = build_empirical_mdp(data, mdp_shape, params.coverage_delta);
  c.behavior = floored(estimate_behavior_policy(data, params.smoothing), params.zeta);
  c.local_policy = floored(global_pi, params.zeta);
  c.local_q.values = Matrix::Zero(mdp_shape.n_states, mdp_shape.n_actions);
  c.params = params;
  c.data = std::move(data);
  return c;
}

double uncovered_q_value(const EmpiricalMdp& m) { return -m.r_max / (1.0 - m.gamma); }

VcqlResult vcql_evaluate(const ClientState& client, const Policy& global_pi, const VoteMode& mode, bool use_vote) {
  const EmpiricalMdp& m = client.empirical;
  const HyperParams& p = client.params;
  const int S = m.n_states;
  const int A = m.n_actions;
  const double q_low = uncovered_q_value(m);
  const bool l2 = p.l2_q_weight > 0.0 && client.prev_q.has_value();

  Matrix q = client.local_q.values;
  if (q.rows() != S || q.cols() != A) q = Matrix::Zero(S, A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a)
      if (!m.covered(s, a)) q(s, a) = q_low;

  VcqlResult r;
  Matrix vote = client.local_policy.probs();
  r.winners.assign(static_cast<std::size_t>(S), Candidate::Local);
  Rng rng(mode.sample_seed);

  for (int it = 0; it < p.eval_max_iter; ++it) {
    if (use_vote && (it == 0 || it < p.vote_freeze_iter)) {
      const QTable current{q};
      for (int s = 0; s < S; ++s) {
        VoteOutcome o = vote_policy(s, current, client.local_policy, client.behavior, global_pi, mode, &rng);
        vote.row(s) = o.action_dist.transpose();
        r.winners[static_cast<std::size_t>(s)] = o.winner;
      }
    }
    const Vector v = (vote.array() * q.array()).rowwise().sum();
    Matrix next = q;
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        if (!m.covered(s, a)) continue;
        const Eigen::Index row = static_cast<Eigen::Index>(s) * A + a;
        double target = m.r_hat(s, a) + m.gamma * m.t_hat.row(row).dot(v) -
                        p.alpha * (vote(s, a) / client.behavior(s, a) - 1.0);
        if (l2) target = (target + p.l2_q_weight * client.prev_q->values(s, a)) / (1.0 + p.l2_q_weight);
        next(s, a) = target;
      }
    r.residual = (next - q).cwiseAbs().maxCoeff();
    q = std::move(next);
    r.iterations = it + 1;
    if (r.residual < p.eval_tol) {
      r.converged = true;
      break;
    }
  }

  r.vote = Policy(vote);
  r.v.values = (vote.array() * q.array()).rowwise().sum();
  r.q.values = std::move(q);
  return r;
}

Policy awr_target(const QTable& q, const ValueTable& v, const Policy& behavior, double beta) {
  if (!(beta > 0.0)) throw ConfigError("awr_target: beta must be positive");
  if (q.values.rows() != behavior.n_states() || q.values.cols() != behavior.n_actions() ||
      v.values.size() != behavior.n_states())
    throw ArgumentError("awr_target: shape mismatch");
  Matrix out(behavior.n_states(), behavior.n_actions());
  for (int s = 0; s < behavior.n_states(); ++s) {
    const Eigen::RowVectorXd adv = (q.values.row(s).array() - v.values[s]).matrix();
    const double top = adv.maxCoeff();
    for (int a = 0; a < behavior.n_actions(); ++a) out(s, a) = behavior(s, a) * std::exp((adv[a] - top) / beta);
    out.row(s) /= out.row(s).sum();
  }
  return Policy(std::move(out));
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index s = 0; s < logits.rows(); ++s) {
    const double top = logits.row(s).maxCoeff();
    out.row(s) = (logits.row(s).array() - top).exp().matrix();
    out.row(s) /= out.row(s).sum();
  }
  return out;
}

namespace {

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index s = 0; s < logits.rows(); ++s) {
    const double top = logits.row(s).maxCoeff();
    const double lse = top + std::log((logits.row(s).array() - top).exp().sum());
    out.row(s) = (logits.row(s).array() - lse).matrix();
  }
  return out;
}

}  // namespace

double AwrObjective::value(const Matrix& logits) const {
  const Matrix log_pi = log_softmax_rows(logits);
  const Matrix pi = log_pi.array().exp().matrix();
  double fit = 0.0;
  for (Eigen::Index s = 0; s < weights.rows(); ++s)
    for (Eigen::Index a = 0; a < weights.cols(); ++a)
      if (weights(s, a) != 0.0) fit += weights(s, a) * log_pi(s, a);
  const double q_term = rho.dot((pi.array() * q.array()).rowwise().sum().matrix());
  return lambda * fit + q_weight * q_term;
}

Matrix AwrObjective::gradient(const Matrix& logits) const {
  const Matrix pi = softmax_rows(logits);
  Matrix g(pi.rows(), pi.cols());
  for (Eigen::Index s = 0; s < pi.rows(); ++s) {
    const double mass = weights.row(s).sum();
    const double mean_q = pi.row(s).dot(q.row(s));
    for (Eigen::Index b = 0; b < pi.cols(); ++b)
      g(s, b) = lambda * (weights(s, b) - mass * pi(s, b)) + q_weight * rho[s] * pi(s, b) * (q(s, b) - mean_q);
  }
  return g;
}

AwrObjective make_awr_objective(const Dataset& data, const QTable& q, const ValueTable& v, double lambda, double beta,
                                double q_weight) {
  if (!(beta > 0.0) || !(lambda > 0.0)) throw ConfigError("awr objective: lambda and beta must be positive");
  if (data.size() == 0) throw DomainError("awr objective: empty dataset");
  const double n = static_cast<double>(data.size());
  AwrObjective obj;
  obj.lambda = lambda;
  obj.q_weight = q_weight;
  obj.q = q.values;
  obj.rho = data.counts_s().cast<double>() / n;
  obj.weights = Matrix::Zero(data.n_states(), data.n_actions());
  for (int s = 0; s < data.n_states(); ++s)
    for (int a = 0; a < data.n_actions(); ++a) {
      const int count = data.counts_sa()(s, a);
      if (count == 0) continue;
      const double exponent = std::min((q.values(s, a) - v.values[s]) / beta, kMaxExponent);
      obj.weights(s, a) = count / n * std::exp(exponent);
    }
  return obj;
}

ImproveResult awr_improve(const ClientState& client, const QTable& q, const ValueTable& v) {
  const HyperParams& p = client.params;
  const AwrObjective obj = make_awr_objective(client.data, q, v, p.lambda, p.beta, p.q_term_weight);
  Matrix z = client.local_policy.probs().cwiseMax(std::numeric_limits<double>::min()).array().log().matrix();

  ImproveResult r;
  double f = obj.value(z);
  r.objective_start = f;
  double lr = p.improve_lr;
  for (int step = 0; step < p.improve_steps; ++step) {
    Matrix d = obj.gradient(z);
    for (Eigen::Index s = 0; s < d.rows(); ++s) d.row(s) = obj.rho[s] > 0.0 ? Eigen::RowVectorXd(d.row(s) / obj.rho[s])
                                                                             : Eigen::RowVectorXd::Zero(d.cols());
    if (d.cwiseAbs().maxCoeff() == 0.0) break;
    bool accepted = false;
    for (int halvings = 0; halvings <= 20; ++halvings) {
      const Matrix candidate = z + lr * d;
      const double fc = obj.value(candidate);
      if (fc >= f) {
        z = candidate;
        f = fc;
        accepted = true;
        break;
      }
      lr *= 0.5;
    }
    if (!accepted) {
      r.backtrack_exhausted = true;
      break;
    }
    ++r.accepted_steps;
  }
  r.objective_end = f;
  r.policy = floored(Policy(softmax_rows(z)), p.zeta);
  return r;
}

LocalResult local_update(ClientState& client, const Policy& global_pi, const QTable& global_q, const VoteMode& mode,
                         Algo algo) {
  const HyperParams& p = client.params;
  if (global_q.values.rows() == client.empirical.n_states && global_q.values.cols() == client.empirical.n_actions)
    client.local_q = global_q;

  LocalResult r;
  client.local_policy = floored(global_pi, p.zeta);
  switch (algo) {
    case Algo::Fova:
    case Algo::FovaNoVote: {
      r.eval = vcql_evaluate(client, global_pi, mode, algo == Algo::Fova);
      ImproveResult imp = awr_improve(client, r.eval.q, r.eval.v);
      if (imp.backtrack_exhausted) r.warnings.push_back("awr_improve: step size exhausted before improve_steps");
      r.policy = std::move(imp.policy);
      break;
    }
    case Algo::FovaNoAwr: {
      r.eval = vcql_evaluate(client, global_pi, mode, true);
      const Policy target = awr_target(r.eval.q, r.eval.v, client.behavior, p.beta);
      r.policy = floored(merge_visited(target.probs(), client.local_policy, client.data), p.zeta);
      break;
    }
    case Algo::CqlFl: {
      r.eval = vcql_evaluate(client, global_pi, mode, false);
      const Matrix soft = softmax_rows(r.eval.q.values / p.beta);
      r.policy = floored(merge_visited(soft, client.local_policy, client.data), p.zeta);
      break;
    }
  }
  if (!r.eval.converged)
    r.warnings.push_back("vcql_evaluate: no convergence after " + std::to_string(r.eval.iterations) +
                         " sweeps (residual " + std::to_string(r.eval.residual) + ")");
  r.q = r.eval.q;
  client.local_q = r.q;
  client.local_policy = r.policy;
  return r;
}

}  // namespace fova
