#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fova/data.hpp"
#include "fova/mdp.hpp"
#include "fova/rng.hpp"

namespace fova::testing {

inline Policy random_policy(int n_states, int n_actions, Rng& rng, double min_prob = 0.02) {
  Matrix p(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) p(s, a) = min_prob + rng.uniform();
    p.row(s) /= p.row(s).sum();
  }
  return Policy(p);
}

// Random MDP whose every (s, a) leads to a single successor.
inline MdpSpec random_deterministic_mdp(int n_states, int n_actions, double gamma, Rng& rng) {
  MdpSpec m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.gamma = gamma;
  m.r_max = 1.0;
  m.transition = Matrix::Zero(n_states * n_actions, n_states);
  m.reward = Matrix(n_states, n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) {
      m.transition(m.row(s, a), static_cast<int>(rng.uniform() * n_states) % n_states) = 1.0;
      m.reward(s, a) = rng.uniform(-1.0, 1.0);
    }
  m.initial_dist = Vector::Constant(n_states, 1.0 / n_states);
  m.validate();
  return m;
}

// Logs uniformly random transitions until every pair has been seen
// `per_pair` times. Independent of the trajectory sampler in the library.
inline Dataset covering_dataset(const MdpSpec& mdp, int per_pair, Rng& rng, double reward_noise = 0.0,
                                double quality_label = 0.0) {
  std::vector<Transition> ts;
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      for (int i = 0; i < per_pair; ++i) {
        Vector row = mdp.transition.row(mdp.row(s, a)).transpose();
        const int next = rng.categorical(row);
        double r = mdp.reward(s, a);
        if (reward_noise > 0.0) r = std::clamp(r + reward_noise * rng.normal(), -mdp.r_max, mdp.r_max);
        ts.push_back({s, a, r, next});
      }
  return Dataset(mdp.n_states, mdp.n_actions, std::move(ts), quality_label, 0);
}

// Oracle value of `policy` by plain iteration of the Bellman operator.
inline Vector iterate_values(const MdpSpec& mdp, const Policy& policy, int sweeps = 5000) {
  Vector v = Vector::Zero(mdp.n_states);
  for (int it = 0; it < sweeps; ++it) {
    Vector next(mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s) {
      double total = 0.0;
      for (int a = 0; a < mdp.n_actions; ++a)
        total += policy(s, a) * (mdp.reward(s, a) + mdp.gamma * mdp.transition.row(mdp.row(s, a)).dot(v));
      next[s] = total;
    }
    v = next;
  }
  return v;
}

}  // namespace fova::testing
