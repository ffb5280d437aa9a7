#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fova {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Finite discounted MDP.
///
/// Transitions are stored as an (S*A) x S matrix whose row `s*A + a` holds
/// T(s, a, .). Rewards are an S x A matrix bounded in magnitude by r_max.
struct MdpSpec {
  int n_states = 0;
  int n_actions = 0;
  double gamma = 0.9;
  double r_max = 1.0;
  Matrix transition;
  Matrix reward;
  Vector initial_dist;

  Eigen::Index row(int s, int a) const { return static_cast<Eigen::Index>(s) * n_actions + a; }
  double prob(int s, int a, int next) const { return transition(row(s, a), next); }

  /// Throws ConfigError when sizes, stochasticity or reward bounds are violated.
  void validate() const;
};

/// Row-stochastic |S| x |A| action distribution.
class Policy {
 public:
  Policy() = default;
  /// Validates rows (nonnegative, sum to 1 within 1e-10).
  explicit Policy(Matrix probs);

  static Policy uniform(int n_states, int n_actions);
  static Policy deterministic(const std::vector<int>& actions, int n_actions);

  int n_states() const { return static_cast<int>(probs_.rows()); }
  int n_actions() const { return static_cast<int>(probs_.cols()); }
  double operator()(int s, int a) const { return probs_(s, a); }
  const Matrix& probs() const { return probs_; }
  auto row(int s) const { return probs_.row(s); }

  /// Smallest entry.
  double min_prob() const { return probs_.minCoeff(); }

  /// Raises every entry to at least `zeta` and takes the missing mass
  /// proportionally from the entries above the floor. Requires |A|*zeta < 1.
  Policy with_floor(double zeta) const;

  friend bool operator==(const Policy& a, const Policy& b) { return a.probs_ == b.probs_; }

 private:
  Matrix probs_;
};

struct QTable {
  Matrix values;
};

struct ValueTable {
  Vector values;
};

struct OccupancyMeasure {
  Vector state_dist;
  Matrix state_action_dist;
};

enum class DivergenceKind { KL, TV };

/// Random MDP with Dirichlet(1) transition rows, uniform rewards in
/// [-r_max, r_max] and a uniform initial distribution.
MdpSpec make_random_mdp(int n_states, int n_actions, double gamma, double r_max,
                        std::uint64_t seed);

/// Grid world with the goal in the last cell (absorbing, reward
/// `goal_reward` on every action) and the start in cell 0.
///
/// Two-dimensional grids have actions {up, right, down, left}. Grids with a
/// single row or column have the two actions {back, forward} along the chain.
/// With probability `slip_prob` the chosen action is replaced by a uniformly
/// random one. Moves into a wall leave the agent in place.
MdpSpec make_gridworld(int width, int height, double slip_prob, double goal_reward, double gamma);

/// Direct dense solve of (I - gamma P^pi) V = r^pi, then
/// Q = r + gamma T V.
struct Evaluation {
  ValueTable v;
  QTable q;
};
Evaluation exact_policy_evaluation(const MdpSpec& mdp, const Policy& policy);

/// J = sum_s mu0(s) V^pi(s).
double expected_return(const MdpSpec& mdp, const Policy& policy);

/// Normalized discounted occupancy d^pi = (1-gamma) mu0^T (I - gamma P^pi)^{-1}.
OccupancyMeasure occupancy_measure(const MdpSpec& mdp, const Policy& policy);

/// Deterministic optimal policy: value iteration to sup-norm residual `tol`,
/// polished by exact policy iteration. Ties go to the lowest action index.
Policy solve_optimal(const MdpSpec& mdp, double tol = 1e-10);

/// E_{s ~ weights.state_dist}[D(p(.|s), q(.|s))].
/// KL throws DomainError naming (s, a) when p(a|s) > 0 but q(a|s) == 0.
double divergence(const Policy& p, const Policy& q, const Vector& state_weights,
                  DivergenceKind kind);
double divergence(const Policy& p, const Policy& q, const OccupancyMeasure& weights,
                  DivergenceKind kind);

/// Per-state divergences without the state weighting.
double kl_row(const Policy& p, const Policy& q, int s);
double tv_row(const Policy& p, const Policy& q, int s);

/// Argmax with ties resolved to the lowest index. Entries within `tie_tol`
/// of the maximum count as ties.
int argmax_lowest(const Eigen::Ref<const Vector>& values, double tie_tol = 0.0);

/// Greedy deterministic policy with respect to Q.
Policy greedy_policy(const QTable& q, double tie_tol = 0.0);

/// P^pi as an S x S matrix and r^pi as an S vector.
Matrix state_transition_matrix(const MdpSpec& mdp, const Policy& policy);
Vector state_reward_vector(const MdpSpec& mdp, const Policy& policy);

/// Rejects a policy whose shape differs from the MDP.
void check_shape(const MdpSpec& mdp, const Policy& policy);

}  // namespace fova
