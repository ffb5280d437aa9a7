#include "fova/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fova/errors.hpp"
#include "fova/rng.hpp"

namespace fova {

namespace {

constexpr double kStochasticTol = 1e-12;
constexpr double kPolicyRowTol = 1e-10;

}  // namespace

void MdpSpec::validate() const {
  if (n_states < 1 || n_actions < 1) throw ConfigError("mdp: n_states and n_actions must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("mdp: gamma must lie in (0,1)");
  if (!(r_max > 0.0)) throw ConfigError("mdp: r_max must be positive");
  const Eigen::Index rows = static_cast<Eigen::Index>(n_states) * n_actions;
  if (transition.rows() != rows || transition.cols() != n_states)
    throw ConfigError("mdp: transition must be (S*A) x S");
  if (reward.rows() != n_states || reward.cols() != n_actions)
    throw ConfigError("mdp: reward must be S x A");
  if (initial_dist.size() != n_states) throw ConfigError("mdp: initial_dist must have S entries");
  if (transition.minCoeff() < 0.0) throw ConfigError("mdp: negative transition probability");
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (std::abs(transition.row(r).sum() - 1.0) > kStochasticTol) {
      std::ostringstream msg;
      msg << "mdp: transition row (s=" << r / n_actions << ", a=" << r % n_actions
          << ") does not sum to 1";
      throw ConfigError(msg.str());
    }
  }
  if (reward.cwiseAbs().maxCoeff() > r_max) throw ConfigError("mdp: |reward| exceeds r_max");
  if (initial_dist.minCoeff() < 0.0 || std::abs(initial_dist.sum() - 1.0) > kStochasticTol)
    throw ConfigError("mdp: initial_dist is not a probability vector");
}

Policy::Policy(Matrix probs) : probs_(std::move(probs)) {
  if (probs_.rows() < 1 || probs_.cols() < 1) throw ArgumentError("policy: empty matrix");
  if (probs_.minCoeff() < 0.0) throw ArgumentError("policy: negative probability");
  for (Eigen::Index s = 0; s < probs_.rows(); ++s) {
    if (std::abs(probs_.row(s).sum() - 1.0) > kPolicyRowTol) {
      std::ostringstream msg;
      msg << "policy: row " << s << " sums to " << probs_.row(s).sum();
      throw ArgumentError(msg.str());
    }
  }
}

Policy Policy::uniform(int n_states, int n_actions) {
  return Policy(Matrix::Constant(n_states, n_actions, 1.0 / n_actions));
}

Policy Policy::deterministic(const std::vector<int>& actions, int n_actions) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(actions.size()), n_actions);
  for (std::size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] < 0 || actions[s] >= n_actions) throw ArgumentError("policy: action out of range");
    m(static_cast<Eigen::Index>(s), actions[s]) = 1.0;
  }
  return Policy(std::move(m));
}

Policy Policy::with_floor(double zeta) const {
  if (zeta <= 0.0) return *this;
  const double n = static_cast<double>(n_actions());
  if (n * zeta >= 1.0) throw ConfigError("policy floor: |A| * zeta must be below 1");
  Matrix out = probs_;
  for (Eigen::Index s = 0; s < out.rows(); ++s) {
    // Mass above the floor is rescaled to fill 1 - |A| zeta exactly.
    double above = 0.0;
    for (Eigen::Index a = 0; a < out.cols(); ++a) above += std::max(out(s, a) - zeta, 0.0);
    const double target = 1.0 - n * zeta;
    for (Eigen::Index a = 0; a < out.cols(); ++a) {
      const double excess = std::max(out(s, a) - zeta, 0.0);
      out(s, a) = zeta + (above > 0.0 ? excess * target / above : target / n);
    }
  }
  return Policy(std::move(out));
}

MdpSpec make_random_mdp(int n_states, int n_actions, double gamma, double r_max, std::uint64_t seed) {
  if (n_states < 1 || n_actions < 1) throw ConfigError("make_random_mdp: sizes must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("make_random_mdp: gamma must lie in (0,1)");
  if (!(r_max > 0.0)) throw ConfigError("make_random_mdp: r_max must be positive");

  Rng rng(seed);
  MdpSpec mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.gamma = gamma;
  mdp.r_max = r_max;
  mdp.transition.resize(static_cast<Eigen::Index>(n_states) * n_actions, n_states);
  for (Eigen::Index r = 0; r < mdp.transition.rows(); ++r) {
    // Exponential draws normalized to a Dirichlet(1, ..., 1) sample.
    for (int s2 = 0; s2 < n_states; ++s2) mdp.transition(r, s2) = -std::log(rng.uniform_open_zero()) + 1e-300;
    mdp.transition.row(r) /= mdp.transition.row(r).sum();
  }
  mdp.reward.resize(n_states, n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) mdp.reward(s, a) = rng.uniform(-r_max, r_max);
  mdp.initial_dist = Vector::Constant(n_states, 1.0 / n_states);
  return mdp;
}

MdpSpec make_gridworld(int width, int height, double slip_prob, double goal_reward, double gamma) {
  if (width < 1 || height < 1 || width * height < 2) throw ConfigError("make_gridworld: grid needs at least 2 cells");
  if (!(slip_prob >= 0.0 && slip_prob < 1.0)) throw ConfigError("make_gridworld: slip_prob must lie in [0,1)");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("make_gridworld: gamma must lie in (0,1)");
  if (goal_reward == 0.0) throw ConfigError("make_gridworld: goal_reward must be nonzero");

  const bool chain = width == 1 || height == 1;
  // (dx, dy) per action.
  std::vector<std::pair<int, int>> moves;
  if (!chain) {
    moves = {{0, -1}, {1, 0}, {0, 1}, {-1, 0}};
  } else if (height == 1) {
    moves = {{-1, 0}, {1, 0}};
  } else {
    moves = {{0, -1}, {0, 1}};
  }
  const int n_states = width * height;
  const int n_actions = static_cast<int>(moves.size());
  const int goal = n_states - 1;

  MdpSpec mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.gamma = gamma;
  mdp.r_max = std::abs(goal_reward);
  mdp.transition = Matrix::Zero(static_cast<Eigen::Index>(n_states) * n_actions, n_states);
  mdp.reward = Matrix::Zero(n_states, n_actions);
  mdp.initial_dist = Vector::Zero(n_states);
  mdp.initial_dist(0) = 1.0;

  auto destination = [&](int s, int a) {
    const int x = s % width;
    const int y = s / width;
    const int nx = x + moves[a].first;
    const int ny = y + moves[a].second;
    if (nx < 0 || nx >= width || ny < 0 || ny >= height) return s;
    return ny * width + nx;
  };

  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      const auto r = mdp.row(s, a);
      if (s == goal) {
        mdp.transition(r, goal) = 1.0;
        mdp.reward(s, a) = goal_reward;
        continue;
      }
      mdp.transition(r, destination(s, a)) += 1.0 - slip_prob;
      for (int b = 0; b < n_actions; ++b) mdp.transition(r, destination(s, b)) += slip_prob / n_actions;
    }
  }
  return mdp;
}

void check_shape(const MdpSpec& mdp, const Policy& policy) {
  if (policy.n_states() != mdp.n_states || policy.n_actions() != mdp.n_actions) {
    std::ostringstream msg;
    msg << "policy shape " << policy.n_states() << "x" << policy.n_actions() << " does not match mdp "
        << mdp.n_states << "x" << mdp.n_actions;
    throw ArgumentError(msg.str());
  }
}

Matrix state_transition_matrix(const MdpSpec& mdp, const Policy& policy) {
  check_shape(mdp, policy);
  Matrix p = Matrix::Zero(mdp.n_states, mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      const double w = policy(s, a);
      if (w != 0.0) p.row(s) += w * mdp.transition.row(mdp.row(s, a));
    }
  return p;
}

Vector state_reward_vector(const MdpSpec& mdp, const Policy& policy) {
  check_shape(mdp, policy);
  return mdp.reward.cwiseProduct(policy.probs()).rowwise().sum();
}

Evaluation exact_policy_evaluation(const MdpSpec& mdp, const Policy& policy) {
  const Matrix p = state_transition_matrix(mdp, policy);
  const Vector r = state_reward_vector(mdp, policy);
  const Matrix system = Matrix::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * p;
  Evaluation out;
  out.v.values = system.partialPivLu().solve(r);
  const Vector next = mdp.transition * out.v.values;
  out.q.values.resize(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      out.q.values(s, a) = mdp.reward(s, a) + mdp.gamma * next(mdp.row(s, a));
  return out;
}

double expected_return(const MdpSpec& mdp, const Policy& policy) {
  return mdp.initial_dist.dot(exact_policy_evaluation(mdp, policy).v.values);
}

OccupancyMeasure occupancy_measure(const MdpSpec& mdp, const Policy& policy) {
  const Matrix p = state_transition_matrix(mdp, policy);
  const Matrix system = Matrix::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * p.transpose();
  Vector d = (1.0 - mdp.gamma) * system.partialPivLu().solve(mdp.initial_dist);
  d = d.cwiseMax(0.0);
  d /= d.sum();
  OccupancyMeasure occ;
  occ.state_action_dist = policy.probs();
  for (int s = 0; s < mdp.n_states; ++s) occ.state_action_dist.row(s) *= d(s);
  occ.state_dist = std::move(d);
  return occ;
}

int argmax_lowest(const Eigen::Ref<const Vector>& values, double tie_tol) {
  const double best = values.maxCoeff();
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (values(i) >= best - tie_tol) return static_cast<int>(i);
  return 0;
}

Policy greedy_policy(const QTable& q, double tie_tol) {
  std::vector<int> actions(static_cast<std::size_t>(q.values.rows()));
  for (Eigen::Index s = 0; s < q.values.rows(); ++s)
    actions[static_cast<std::size_t>(s)] = argmax_lowest(q.values.row(s).transpose(), tie_tol);
  return Policy::deterministic(actions, static_cast<int>(q.values.cols()));
}

Policy solve_optimal(const MdpSpec& mdp, double tol) {
  Vector v = Vector::Zero(mdp.n_states);
  Matrix q(mdp.n_states, mdp.n_actions);
  auto backup = [&](const Vector& values) {
    const Vector next = mdp.transition * values;
    for (int s = 0; s < mdp.n_states; ++s)
      for (int a = 0; a < mdp.n_actions; ++a) q(s, a) = mdp.reward(s, a) + mdp.gamma * next(mdp.row(s, a));
  };
  for (int it = 0; it < 1000000; ++it) {
    backup(v);
    const Vector next_v = q.rowwise().maxCoeff();
    const double residual = (next_v - v).cwiseAbs().maxCoeff();
    v = next_v;
    if (residual < tol) break;
  }
  backup(v);
  // Policy iteration polish: switch action only on a strict improvement
  // beyond the tie tolerance, so the result is exactly optimal and stable.
  const double tie = 1e-9 * (1.0 + mdp.r_max / (1.0 - mdp.gamma));
  Policy policy = greedy_policy(QTable{q}, tie);
  for (int it = 0; it < 1000; ++it) {
    const Evaluation eval = exact_policy_evaluation(mdp, policy);
    std::vector<int> actions(static_cast<std::size_t>(mdp.n_states));
    bool changed = false;
    for (int s = 0; s < mdp.n_states; ++s) {
      int current = 0;
      for (int a = 0; a < mdp.n_actions; ++a)
        if (policy(s, a) == 1.0) current = a;
      const int best = argmax_lowest(eval.q.values.row(s).transpose(), tie);
      if (eval.q.values(s, best) > eval.q.values(s, current) + tie) {
        actions[static_cast<std::size_t>(s)] = best;
        changed = true;
      } else {
        actions[static_cast<std::size_t>(s)] = current;
      }
    }
    if (!changed) break;
    policy = Policy::deterministic(actions, mdp.n_actions);
  }
  return policy;
}

double kl_row(const Policy& p, const Policy& q, int s) {
  double total = 0.0;
  for (int a = 0; a < p.n_actions(); ++a) {
    const double pa = p(s, a);
    if (pa <= 0.0) continue;
    const double qa = q(s, a);
    if (qa <= 0.0) {
      std::ostringstream msg;
      msg << "KL divergence undefined: q has no mass at (s=" << s << ", a=" << a << ") where p > 0";
      throw DomainError(msg.str());
    }
    total += pa * std::log(pa / qa);
  }
  return std::max(total, 0.0);
}

double tv_row(const Policy& p, const Policy& q, int s) {
  return 0.5 * (p.row(s) - q.row(s)).cwiseAbs().sum();
}

double divergence(const Policy& p, const Policy& q, const Vector& state_weights, DivergenceKind kind) {
  if (p.n_states() != q.n_states() || p.n_actions() != q.n_actions() || state_weights.size() != p.n_states())
    throw ArgumentError("divergence: shape mismatch");
  double total = 0.0;
  for (int s = 0; s < p.n_states(); ++s) {
    const double w = state_weights(s);
    if (w == 0.0) continue;
    total += w * (kind == DivergenceKind::KL ? kl_row(p, q, s) : tv_row(p, q, s));
  }
  return total;
}

double divergence(const Policy& p, const Policy& q, const OccupancyMeasure& weights, DivergenceKind kind) {
  return divergence(p, q, weights.state_dist, kind);
}

}  // namespace fova
