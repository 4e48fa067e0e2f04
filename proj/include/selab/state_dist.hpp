#ifndef SELAB_STATE_DIST_HPP
#define SELAB_STATE_DIST_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "selab/environments.hpp"
#include "selab/mdp.hpp"
#include "selab/rng.hpp"

namespace selab {

enum class DistKind { exact_discounted, exact_stationary, empirical_discounted, empirical_stationary };

inline std::string_view to_string(DistKind k) {
  switch (k) {
    case DistKind::exact_discounted: return "exact_discounted";
    case DistKind::exact_stationary: return "exact_stationary";
    case DistKind::empirical_discounted: return "empirical_discounted";
    case DistKind::empirical_stationary: return "empirical_stationary";
  }
  return "unknown";
}

struct StateDistribution {
  Vector probs;
  DistKind kind = DistKind::exact_discounted;
  double mass = 1.0;

  [[nodiscard]] Vector normalized() const { return probs / mass; }
};

namespace dist_detail {

// LU round-off can leave tiny negatives on unreachable states.
inline Vector clean(Vector p, const char* what) {
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) < -1e-10) throw SolveError(std::string(what) + ": negative probability after solve");
    if (p(i) < 0.0) p(i) = 0.0;
  }
  return p;
}

}  // namespace dist_detail

/// d_bar^T = (1 - gamma) alpha^T (I - gamma P_pi)^{-1}.
inline StateDistribution exact_discounted(const TabularMdp& mdp, const Matrix& pi) {
  const Matrix p = induced_kernel(mdp, pi);
  Vector d = solve_resolvent_transposed(p, mdp.gamma, (1.0 - mdp.gamma) * mdp.alpha);
  d = dist_detail::clean(std::move(d), "exact_discounted");
  return {d / d.sum(), DistKind::exact_discounted, 1.0};
}

inline StateDistribution exact_discounted(const TabularMdp& mdp, const SoftmaxPolicy& policy, const FeatureMap& fmap) {
  return exact_discounted(mdp, policy_table(mdp, policy, fmap));
}

/// P_pi with terminal rows replaced by alpha when `restart` is set.
inline Matrix chain_kernel(const TabularMdp& mdp, const Matrix& pi, bool restart) {
  Matrix p = induced_kernel(mdp, pi);
  if (restart)
    for (int s = 0; s < mdp.n_states; ++s)
      if (mdp.terminal[std::size_t(s)]) p.row(s) = mdp.alpha.transpose();
  return p;
}

/// Stationary law of the induced chain by damped power iteration
/// d <- (d + P^T d) / 2, started from alpha, until ||P^T d - d||_1 <= tol.
inline StateDistribution exact_stationary(const TabularMdp& mdp, const Matrix& pi, bool restart,
                                          double tol = 1e-10, long max_iters = 1'000'000) {
  const Matrix pt = chain_kernel(mdp, pi, restart).transpose();
  Vector d = mdp.alpha;
  for (long it = 0; it < max_iters; ++it) {
    const Vector image = pt * d;
    if ((image - d).lpNorm<1>() <= tol) return {d / d.sum(), DistKind::exact_stationary, 1.0};
    d = 0.5 * (d + image);
  }
  throw std::runtime_error(
      "exact_stationary: no convergence after " + std::to_string(max_iters) +
      " iterations; the induced chain is likely reducible (several closed classes reachable from alpha)" +
      (restart ? "" : " - consider restart=true for episodic tasks"));
}

inline StateDistribution exact_stationary(const TabularMdp& mdp, const SoftmaxPolicy& policy, const FeatureMap& fmap,
                                          bool restart) {
  return exact_stationary(mdp, policy_table(mdp, policy, fmap), restart);
}

/// Stationary law by a direct solve on the states reachable from alpha:
/// d^T (I - P) = 0 with one balance equation replaced by sum(d) = 1.
/// Used where the objective is differentiated and power-iteration tolerance
/// would swamp finite differences.
inline Vector stationary_solve(const Matrix& p, const std::vector<bool>& support) {
  std::vector<int> idx;
  for (std::size_t s = 0; s < support.size(); ++s)
    if (support[s]) idx.push_back(int(s));
  const auto m = Eigen::Index(idx.size());
  Matrix a(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) a(i, j) = (i == j ? 1.0 : 0.0) - p(idx[std::size_t(j)], idx[std::size_t(i)]);
  a.row(m - 1).setOnes();
  Vector b = Vector::Zero(m);
  b(m - 1) = 1.0;
  Eigen::PartialPivLU<Matrix> lu(a);
  Vector x = lu.solve(b);
  detail::check_solution(lu, a, x, b, "stationary_solve");
  Vector d = Vector::Zero(p.rows());
  for (Eigen::Index i = 0; i < m; ++i) d(idx[std::size_t(i)]) = x(i);
  return dist_detail::clean(std::move(d), "stationary_solve");
}

/// Shannon entropy in nats of the renormalized distribution; 0 log 0 := 0.
inline double entropy(const Vector& p) {
  if ((p.array() < 0.0).any()) throw std::invalid_argument("entropy: negative probability");
  const double total = p.sum();
  if (!(total > 0.0)) throw std::invalid_argument("entropy: zero total mass");
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double q = p(i) / total;
    if (q > 0.0) h -= q * std::log(q);
  }
  return h;
}

inline double entropy(const StateDistribution& d) { return entropy(d.probs); }

inline double total_variation(const Vector& p, const Vector& q) { return 0.5 * (p - q).lpNorm<1>(); }

inline constexpr std::uint64_t kStreamAccept = 3;

struct AcceptanceSamples {
  std::vector<int> accepted;
  std::vector<int> steps_to_accept;  // states examined per acceptance, >= 1
  std::vector<int> visited;          // every examined state, in order
};

/// Simulates pi from alpha and accepts the current state with probability
/// (1 - gamma); the episode restarts after every acceptance, so accepted
/// states are i.i.d. draws from d_bar.
inline AcceptanceSamples acceptance_sample(const TabularMdp& mdp, const Matrix& pi, int n_accepted,
                                           std::uint64_t seed, bool keep_visited = false) {
  AcceptanceSamples out;
  out.accepted.reserve(std::size_t(n_accepted));
  out.steps_to_accept.reserve(std::size_t(n_accepted));
  for (int ep = 0; ep < n_accepted; ++ep) {
    int s = sample_start(mdp, seed, std::uint64_t(ep));
    for (std::uint64_t t = 0;; ++t) {
      if (keep_visited) out.visited.push_back(s);
      if (uniform01({seed, std::uint64_t(ep), t, kStreamAccept}) < 1.0 - mdp.gamma) {
        out.accepted.push_back(s);
        out.steps_to_accept.push_back(int(t + 1));
        break;
      }
      const Vector probs = pi.row(s).transpose();
      const int a = sample_action(probs, seed, std::uint64_t(ep), t);
      s = sample_next(mdp, s, a, seed, std::uint64_t(ep), t);
    }
  }
  return out;
}

inline AcceptanceSamples acceptance_sample(const TabularMdp& mdp, const SoftmaxPolicy& policy, const FeatureMap& fmap,
                                           int n_accepted, std::uint64_t seed) {
  return acceptance_sample(mdp, policy_table(mdp, policy, fmap), n_accepted, seed);
}

/// First `n_steps` states of the acceptance process. Every examined state is
/// recorded, so the sequence is a chain that resets to alpha with probability
/// (1 - gamma) per step; its long-run frequencies equal d_bar.
inline std::vector<int> discounted_visitation_sequence(const TabularMdp& mdp, const Matrix& pi, int n_steps,
                                                       std::uint64_t seed) {
  std::vector<int> seq;
  seq.reserve(std::size_t(n_steps));
  for (std::uint64_t ep = 0; int(seq.size()) < n_steps; ++ep) {
    int s = sample_start(mdp, seed, ep);
    for (std::uint64_t t = 0; int(seq.size()) < n_steps; ++t) {
      seq.push_back(s);
      if (uniform01({seed, ep, t, kStreamAccept}) < 1.0 - mdp.gamma) break;
      const Vector probs = pi.row(s).transpose();
      s = sample_next(mdp, s, sample_action(probs, seed, ep, t), seed, ep, t);
    }
  }
  return seq;
}

inline Vector histogram(const std::vector<int>& states, int n_states) {
  Vector h = Vector::Zero(n_states);
  for (int s : states) h(s) += 1.0;
  return h / double(states.size());
}

/// Importance-weighted occupancy estimate: each episode contributes
/// (1 - gamma) gamma^t at S_t for t = 0..T, episodes are averaged. `literal_one_over_t`
/// additionally divides each episode by its step count T.
inline StateDistribution empirical_discounted(const std::vector<Trajectory>& trajectories, int n_states, double gamma,
                                             bool literal_one_over_t = false) {
  if (trajectories.empty()) throw std::invalid_argument("empirical_discounted: no trajectories");
  Vector p = Vector::Zero(n_states);
  for (const auto& traj : trajectories) {
    const auto states = traj.states();
    const double scale = literal_one_over_t ? 1.0 / double(std::max<std::size_t>(traj.steps.size(), 1)) : 1.0;
    double w = 1.0 - gamma;
    for (int s : states) {
      p(s) += scale * w;
      w *= gamma;
    }
  }
  p /= double(trajectories.size());
  return {p, DistKind::empirical_discounted, p.sum()};
}

/// Visit-frequency estimate of the stationary law over all states of all trajectories.
inline StateDistribution empirical_stationary(const std::vector<Trajectory>& trajectories, int n_states) {
  std::vector<int> all;
  for (const auto& traj : trajectories) {
    auto s = traj.states();
    all.insert(all.end(), s.begin(), s.end());
  }
  if (all.empty()) throw std::invalid_argument("empirical_stationary: no states");
  return {histogram(all, n_states), DistKind::empirical_stationary, 1.0};
}

enum class Weighting { uniform, discounted };

/// Entropy estimate from a sequence of states and a log-density:
/// uniform: -(1/n) sum_t log p(S_t); discounted: -(1 - gamma) sum_t gamma^t log p(S_t).
inline double empirical_entropy(const std::vector<int>& states, const std::function<double(int)>& log_density,
                                Weighting weighting, double gamma) {
  if (states.empty()) throw std::invalid_argument("empirical_entropy: empty state sequence");
  double acc = 0.0;
  double w = 1.0 - gamma;
  for (int s : states) {
    const double lp = log_density(s);
    if (!std::isfinite(lp)) throw std::domain_error("empirical_entropy: non-finite log density at state " + std::to_string(s));
    if (weighting == Weighting::uniform) {
      acc += lp;
    } else {
      acc += w * lp;
      w *= gamma;
    }
  }
  return weighting == Weighting::uniform ? -acc / double(states.size()) : -acc;
}

inline double empirical_entropy(const Trajectory& traj, const std::function<double(int)>& log_density,
                                Weighting weighting, double gamma) {
  return empirical_entropy(traj.states(), log_density, weighting, gamma);
}

}  // namespace selab

#endif  // SELAB_STATE_DIST_HPP
