#ifndef SELAB_MDP_HPP
#define SELAB_MDP_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace selab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised when a linear solve is singular or numerically unusable.
class SolveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Finite MDP with rewards r(s,a) and absorbing, zero-reward terminal states.
///
/// The kernel is stored as an (n_states * n_actions) x n_states row-major
/// matrix; row `s * n_actions + a` is the next-state law for (s, a).
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  RowMatrix kernel;
  Matrix reward;  // n_states x n_actions
  Vector alpha;   // start distribution
  double gamma = 0.9;
  std::vector<bool> terminal;

  [[nodiscard]] auto row(int s, int a) const { return kernel.row(s * n_actions + a); }
  [[nodiscard]] auto row(int s, int a) { return kernel.row(s * n_actions + a); }

  /// Allocates a zero kernel/reward with uniform start distribution.
  static TabularMdp zeros(int n_states, int n_actions, double gamma) {
    TabularMdp m;
    m.n_states = n_states;
    m.n_actions = n_actions;
    m.kernel = RowMatrix::Zero(static_cast<Eigen::Index>(n_states) * n_actions, n_states);
    m.reward = Matrix::Zero(n_states, n_actions);
    m.alpha = Vector::Constant(n_states, 1.0 / n_states);
    m.gamma = gamma;
    m.terminal.assign(static_cast<std::size_t>(n_states), false);
    return m;
  }

  /// Turns `s` into an absorbing zero-reward state.
  void make_terminal(int s) {
    terminal[static_cast<std::size_t>(s)] = true;
    for (int a = 0; a < n_actions; ++a) {
      row(s, a).setZero();
      row(s, a)(s) = 1.0;
      reward(s, a) = 0.0;
    }
  }

  /// Throws std::invalid_argument naming the first violated invariant.
  void validate() const {
    constexpr double tol = 1e-12;
    if (n_states <= 0 || n_actions <= 0) throw std::invalid_argument("mdp: n_states and n_actions must be positive");
    if (kernel.rows() != static_cast<Eigen::Index>(n_states) * n_actions || kernel.cols() != n_states)
      throw std::invalid_argument("mdp: kernel shape mismatch");
    if (reward.rows() != n_states || reward.cols() != n_actions) throw std::invalid_argument("mdp: reward shape mismatch");
    if (alpha.size() != n_states) throw std::invalid_argument("mdp: alpha size mismatch");
    if (terminal.size() != static_cast<std::size_t>(n_states)) throw std::invalid_argument("mdp: terminal mask size mismatch");
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("mdp: gamma must lie in (0,1)");
    if (!reward.allFinite()) throw std::invalid_argument("mdp: non-finite reward");
    for (Eigen::Index r = 0; r < kernel.rows(); ++r) {
      if ((kernel.row(r).array() < 0.0).any() || !kernel.row(r).allFinite())
        throw std::invalid_argument("mdp: kernel row " + std::to_string(r) + " has negative or non-finite entries");
      if (std::abs(kernel.row(r).sum() - 1.0) > tol)
        throw std::invalid_argument("mdp: kernel row " + std::to_string(r) + " does not sum to 1");
    }
    if ((alpha.array() < 0.0).any() || std::abs(alpha.sum() - 1.0) > tol)
      throw std::invalid_argument("mdp: alpha is not a probability vector");
    for (int s = 0; s < n_states; ++s) {
      if (!terminal[static_cast<std::size_t>(s)]) continue;
      for (int a = 0; a < n_actions; ++a) {
        if (std::abs(row(s, a)(s) - 1.0) > tol)
          throw std::invalid_argument("mdp: terminal state " + std::to_string(s) + " is not a self-loop");
        if (reward(s, a) != 0.0)
          throw std::invalid_argument("mdp: terminal state " + std::to_string(s) + " has nonzero reward");
      }
    }
  }
};

/// Maps states to policy feature rows; identity unless states are aliased.
struct FeatureMap {
  std::vector<int> feature_of;
  int n_features = 0;

  static FeatureMap identity(int n_states) {
    FeatureMap f;
    f.n_features = n_states;
    f.feature_of.resize(static_cast<std::size_t>(n_states));
    for (int s = 0; s < n_states; ++s) f.feature_of[static_cast<std::size_t>(s)] = s;
    return f;
  }

  [[nodiscard]] int operator()(int s) const { return feature_of[static_cast<std::size_t>(s)]; }

  void validate(int n_states) const {
    if (n_features <= 0) throw std::invalid_argument("feature map: n_features must be positive");
    if (feature_of.size() != static_cast<std::size_t>(n_states))
      throw std::invalid_argument("feature map: size does not match n_states");
    std::vector<bool> hit(static_cast<std::size_t>(n_features), false);
    for (int f : feature_of) {
      if (f < 0 || f >= n_features) throw std::invalid_argument("feature map: index out of range");
      hit[static_cast<std::size_t>(f)] = true;
    }
    for (bool h : hit)
      if (!h) throw std::invalid_argument("feature map: not surjective onto [0, n_features)");
  }
};

/// Softmax policy logits, one row per feature.
struct SoftmaxPolicy {
  Matrix theta;  // n_features x n_actions

  static SoftmaxPolicy uniform(int n_features, int n_actions) { return {Matrix::Zero(n_features, n_actions)}; }

  /// Row-major flattening, the layout fed to the density estimator.
  [[nodiscard]] Vector flat() const {
    Vector out(theta.size());
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < theta.rows(); ++i)
      for (Eigen::Index j = 0; j < theta.cols(); ++j) out(k++) = theta(i, j);
    return out;
  }
};

inline Vector softmax(const Eigen::Ref<const Vector>& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  return e / e.sum();
}

inline Vector action_distribution(const SoftmaxPolicy& policy, const FeatureMap& fmap, int s) {
  const Vector logits = policy.theta.row(fmap(s)).transpose();
  if (!logits.allFinite()) throw std::invalid_argument("policy: non-finite logits for state " + std::to_string(s));
  return softmax(logits);
}

/// pi(a|s) for every state, n_states x n_actions.
inline Matrix policy_table(const TabularMdp& mdp, const SoftmaxPolicy& policy, const FeatureMap& fmap) {
  if (!policy.theta.allFinite()) throw std::invalid_argument("policy: non-finite theta");
  if (policy.theta.cols() != mdp.n_actions || policy.theta.rows() != fmap.n_features)
    throw std::invalid_argument("policy: theta shape does not match (n_features, n_actions)");
  Matrix pi(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s) pi.row(s) = softmax(policy.theta.row(fmap(s)).transpose()).transpose();
  return pi;
}

inline Matrix induced_kernel(const TabularMdp& mdp, const Matrix& pi) {
  Matrix p = Matrix::Zero(mdp.n_states, mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) p.row(s) += pi(s, a) * mdp.row(s, a);
  return p;
}

inline Matrix induced_kernel(const TabularMdp& mdp, const SoftmaxPolicy& policy, const FeatureMap& fmap) {
  return induced_kernel(mdp, policy_table(mdp, policy, fmap));
}

inline Vector induced_reward(const TabularMdp& mdp, const Matrix& pi) {
  return (pi.array() * mdp.reward.array()).rowwise().sum();
}

inline Vector induced_reward(const TabularMdp& mdp, const SoftmaxPolicy& policy, const FeatureMap& fmap) {
  return induced_reward(mdp, policy_table(mdp, policy, fmap));
}

namespace detail {

inline void check_solution(const Eigen::PartialPivLU<Matrix>& lu, const Matrix& a, const Matrix& x,
                           const Matrix& b, const char* what) {
  if (!x.allFinite() || !(lu.rcond() > 1e-13))
    throw SolveError(std::string(what) + ": linear system is singular or ill-conditioned");
  const double scale = a.cwiseAbs().maxCoeff() * x.cwiseAbs().maxCoeff() + b.cwiseAbs().maxCoeff();
  if ((a * x - b).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + scale))
    throw SolveError(std::string(what) + ": residual too large after LU solve");
}

}  // namespace detail

/// Solves (I - gamma P) x = b.
inline Matrix solve_resolvent(const Matrix& p, double gamma, const Matrix& b) {
  const Matrix a = Matrix::Identity(p.rows(), p.cols()) - gamma * p;
  Eigen::PartialPivLU<Matrix> lu(a);
  Matrix x = lu.solve(b);
  detail::check_solution(lu, a, x, b, "resolvent");
  return x;
}

/// Solves x^T (I - gamma P) = b^T, returning x.
inline Vector solve_resolvent_transposed(const Matrix& p, double gamma, const Vector& b) {
  const Matrix a = (Matrix::Identity(p.rows(), p.cols()) - gamma * p).transpose();
  Eigen::PartialPivLU<Matrix> lu(a);
  Vector x = lu.solve(b);
  detail::check_solution(lu, a, x, b, "resolvent");
  return x;
}

/// v_pi = (I - gamma P_pi)^{-1} r_pi.
inline Vector policy_values(const TabularMdp& mdp, const Matrix& pi) {
  return solve_resolvent(induced_kernel(mdp, pi), mdp.gamma, induced_reward(mdp, pi));
}

/// Q_pi(s,a) = r(s,a) + gamma * sum_s' P(s'|s,a) v_pi(s').
inline Matrix action_values(const TabularMdp& mdp, const Matrix& pi) {
  const Vector v = policy_values(mdp, pi);
  Matrix q(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) q(s, a) = mdp.reward(s, a) + mdp.gamma * mdp.row(s, a).dot(v);
  return q;
}

inline double policy_return(const TabularMdp& mdp, const Matrix& pi) { return mdp.alpha.dot(policy_values(mdp, pi)); }

inline double policy_return(const TabularMdp& mdp, const SoftmaxPolicy& policy, const FeatureMap& fmap) {
  return policy_return(mdp, policy_table(mdp, policy, fmap));
}

struct ValueIterationResult {
  Vector values;
  std::vector<int> greedy;  // one action per state
  int iterations = 0;
  double residual = 0.0;
};

/// Bellman optimality backup; `best` receives the lowest-index maximizer.
inline Vector bellman_optimality(const TabularMdp& mdp, const Vector& v, std::vector<int>* best = nullptr) {
  Vector out(mdp.n_states);
  if (best) best->assign(static_cast<std::size_t>(mdp.n_states), 0);
  for (int s = 0; s < mdp.n_states; ++s) {
    double top = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < mdp.n_actions; ++a) {
      const double q = mdp.reward(s, a) + mdp.gamma * mdp.row(s, a).dot(v);
      if (q > top + 1e-12 * (1.0 + std::abs(top)) || a == 0) {
        top = q;
        if (best) (*best)[static_cast<std::size_t>(s)] = a;
      }
    }
    out(s) = top;
  }
  return out;
}

/// Value iteration. Stops once the sup-norm residual is below tol * (1 - gamma),
/// which bounds both the residual and the distance to V* by tol.
inline ValueIterationResult value_iteration(const TabularMdp& mdp, double tol, long max_iters = 1'000'000) {
  if (!(tol > 0.0)) throw std::invalid_argument("value_iteration: tol must be positive");
  ValueIterationResult res;
  Vector v = Vector::Zero(mdp.n_states);
  const double stop = tol * (1.0 - mdp.gamma);
  for (long it = 0; it < max_iters; ++it) {
    Vector next = bellman_optimality(mdp, v);
    const double resid = (next - v).cwiseAbs().maxCoeff();
    v = std::move(next);
    if (resid <= stop) {
      res.values = v;
      res.iterations = static_cast<int>(it + 1);
      bellman_optimality(mdp, v, &res.greedy);
      res.residual = (bellman_optimality(mdp, v) - v).cwiseAbs().maxCoeff();
      return res;
    }
  }
  throw std::runtime_error("value_iteration: iteration cap exceeded");
}

/// One-hot policy table for a deterministic action choice.
inline Matrix deterministic_table(const TabularMdp& mdp, const std::vector<int>& actions) {
  Matrix pi = Matrix::Zero(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s) pi(s, actions[static_cast<std::size_t>(s)]) = 1.0;
  return pi;
}

/// States reachable from supp(alpha) through any positive-probability transition.
inline std::vector<bool> reachable_from_start(const TabularMdp& mdp) {
  std::vector<bool> seen(static_cast<std::size_t>(mdp.n_states), false);
  std::vector<int> stack;
  for (int s = 0; s < mdp.n_states; ++s)
    if (mdp.alpha(s) > 0.0) {
      seen[static_cast<std::size_t>(s)] = true;
      stack.push_back(s);
    }
  while (!stack.empty()) {
    const int s = stack.back();
    stack.pop_back();
    for (int a = 0; a < mdp.n_actions; ++a)
      for (int t = 0; t < mdp.n_states; ++t)
        if (mdp.row(s, a)(t) > 0.0 && !seen[static_cast<std::size_t>(t)]) {
          seen[static_cast<std::size_t>(t)] = true;
          stack.push_back(t);
        }
  }
  return seen;
}

// JSON document: n_states, n_actions, kernel[s][a][s'], reward[s][a], alpha, gamma, terminal.
inline void to_json(nlohmann::json& j, const TabularMdp& m) {
  nlohmann::json kernel = nlohmann::json::array();
  nlohmann::json reward = nlohmann::json::array();
  for (int s = 0; s < m.n_states; ++s) {
    nlohmann::json ks = nlohmann::json::array();
    nlohmann::json rs = nlohmann::json::array();
    for (int a = 0; a < m.n_actions; ++a) {
      std::vector<double> r(m.row(s, a).begin(), m.row(s, a).end());
      ks.push_back(r);
      rs.push_back(m.reward(s, a));
    }
    kernel.push_back(std::move(ks));
    reward.push_back(std::move(rs));
  }
  j = nlohmann::json{{"n_states", m.n_states},
                     {"n_actions", m.n_actions},
                     {"kernel", std::move(kernel)},
                     {"reward", std::move(reward)},
                     {"alpha", std::vector<double>(m.alpha.begin(), m.alpha.end())},
                     {"gamma", m.gamma},
                     {"terminal", m.terminal}};
}

inline void from_json(const nlohmann::json& j, TabularMdp& m) {
  const int ns = j.at("n_states").get<int>();
  const int na = j.at("n_actions").get<int>();
  if (ns <= 0 || na <= 0) throw std::invalid_argument("mdp json: n_states and n_actions must be positive");
  m = TabularMdp::zeros(ns, na, j.at("gamma").get<double>());
  const auto& kernel = j.at("kernel");
  const auto& reward = j.at("reward");
  if (kernel.size() != static_cast<std::size_t>(ns) || reward.size() != static_cast<std::size_t>(ns))
    throw std::invalid_argument("mdp json: kernel/reward outer length must equal n_states");
  for (int s = 0; s < ns; ++s) {
    if (kernel[s].size() != static_cast<std::size_t>(na) || reward[s].size() != static_cast<std::size_t>(na))
      throw std::invalid_argument("mdp json: kernel/reward row " + std::to_string(s) + " must have n_actions entries");
    for (int a = 0; a < na; ++a) {
      const auto r = kernel[s][a].get<std::vector<double>>();
      if (r.size() != static_cast<std::size_t>(ns))
        throw std::invalid_argument("mdp json: kernel[" + std::to_string(s) + "][" + std::to_string(a) + "] length");
      for (int t = 0; t < ns; ++t) m.row(s, a)(t) = r[static_cast<std::size_t>(t)];
      m.reward(s, a) = reward[s][a].get<double>();
    }
  }
  const auto alpha = j.at("alpha").get<std::vector<double>>();
  if (alpha.size() != static_cast<std::size_t>(ns)) throw std::invalid_argument("mdp json: alpha length");
  m.alpha = Eigen::Map<const Vector>(alpha.data(), ns);
  m.terminal = j.at("terminal").get<std::vector<bool>>();
  m.validate();
}

}  // namespace selab

#endif  // SELAB_MDP_HPP
