#ifndef SELAB_EXACT_PG_HPP
#define SELAB_EXACT_PG_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "selab/mdp.hpp"
#include "selab/state_dist.hpp"

namespace selab {

/// Which occupancy measure the entropy regularizer is taken over.
enum class EntropyKind { discounted, stationary };

inline std::string_view to_string(EntropyKind k) { return k == EntropyKind::discounted ? "discounted" : "stationary"; }

inline EntropyKind parse_entropy_kind(std::string_view s) {
  if (s == "discounted") return EntropyKind::discounted;
  if (s == "stationary") return EntropyKind::stationary;
  throw std::invalid_argument("unknown entropy kind '" + std::string(s) + "' (expected discounted|stationary)");
}

struct ObjectiveParts {
  double J = 0.0;
  double H = 0.0;
  double J_tilde = 0.0;
};

namespace pg_detail {

// The state distribution the regularizer uses, plus the linear-algebra pieces
// its gradient needs. Stationary kind works on the restart-augmented chain
// restricted to the states reachable from alpha.
struct Occupancy {
  Matrix pi;
  Matrix p;        // P_pi
  Vector values;   // v_pi
  Vector d;        // distribution entering the entropy
  std::vector<bool> support;
};

inline Occupancy occupancy(const TabularMdp& mdp, const SoftmaxPolicy& policy, const FeatureMap& fmap, EntropyKind kind) {
  Occupancy o;
  o.pi = policy_table(mdp, policy, fmap);
  o.p = induced_kernel(mdp, o.pi);
  o.values = solve_resolvent(o.p, mdp.gamma, induced_reward(mdp, o.pi));
  if (kind == EntropyKind::discounted) {
    o.d = exact_discounted(mdp, o.pi).probs;
    o.support.assign(std::size_t(mdp.n_states), false);
    for (int s = 0; s < mdp.n_states; ++s) o.support[std::size_t(s)] = o.d(s) > 0.0;
  } else {
    o.support = reachable_from_start(mdp);
    o.d = stationary_solve(chain_kernel(mdp, o.pi, true), o.support);
  }
  return o;
}

inline double support_entropy(const Vector& d, const std::vector<bool>& support) {
  double h = 0.0;
  for (Eigen::Index s = 0; s < d.size(); ++s)
    if (support[std::size_t(s)] && d(s) > 0.0) h -= d(s) * std::log(d(s));
  return h;
}

// dObj/dtheta from dObj/dpi(a|s), through the per-state softmax and the feature map.
inline Matrix softmax_chain(const Matrix& pi, const Matrix& g_pi, const FeatureMap& fmap) {
  Matrix grad = Matrix::Zero(fmap.n_features, pi.cols());
  for (Eigen::Index s = 0; s < pi.rows(); ++s) {
    const double mean = pi.row(s).dot(g_pi.row(s));
    grad.row(fmap(int(s))).array() += pi.row(s).array() * (g_pi.row(s).array() - mean);
  }
  return grad;
}

}  // namespace pg_detail

inline ObjectiveParts regularized_objective_parts(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                                                  const FeatureMap& fmap, double lambda, EntropyKind kind) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("regularized_objective: lambda must be >= 0");
  const auto o = pg_detail::occupancy(mdp, policy, fmap, kind);
  ObjectiveParts parts;
  parts.J = mdp.alpha.dot(o.values);
  parts.H = pg_detail::support_entropy(o.d, o.support);
  parts.J_tilde = parts.J + lambda * parts.H;
  return parts;
}

/// J(theta) + lambda * H(d_theta).
inline double regularized_objective(const TabularMdp& mdp, const SoftmaxPolicy& policy, const FeatureMap& fmap,
                                    double lambda, EntropyKind kind) {
  return regularized_objective_parts(mdp, policy, fmap, lambda, kind).J_tilde;
}

/// Exact gradient of J + lambda H(d) with respect to theta.
///
/// With M = (I - gamma P)^{-1}, u = alpha^T M and g = 1 + log d on the support:
///   dJ/dpi(a|s)          = u(s) Q(s,a)
///   dH(d_bar)/dpi(a|s)   = -gamma d_bar(s) K(s,a,.) M g
///   dH(d_1)/dpi(a|s)     = -d_1(s) K(s,a,.) Z g,   Z = (I - P + 1 d_1^T)^{-1}
/// where the stationary form comes from differentiating d^T (I - P) = 0,
/// d^T 1 = 1 on the restart chain (terminal rows do not depend on pi).
inline Matrix analytic_gradient(const TabularMdp& mdp, const SoftmaxPolicy& policy, const FeatureMap& fmap,
                                double lambda, EntropyKind kind) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("analytic_gradient: lambda must be >= 0");
  const auto o = pg_detail::occupancy(mdp, policy, fmap, kind);
  const int ns = mdp.n_states;
  const int na = mdp.n_actions;

  const Vector u = solve_resolvent_transposed(o.p, mdp.gamma, mdp.alpha);
  Matrix g_pi(ns, na);
  for (int s = 0; s < ns; ++s)
    for (int a = 0; a < na; ++a) g_pi(s, a) = u(s) * (mdp.reward(s, a) + mdp.gamma * mdp.row(s, a).dot(o.values));

  if (lambda > 0.0) {
    Vector g = Vector::Zero(ns);
    for (int s = 0; s < ns; ++s) {
      if (!o.support[std::size_t(s)]) continue;
      if (!(o.d(s) > 1e-300))
        throw std::domain_error("analytic_gradient: state " + std::to_string(s) +
                                " has zero occupancy inside the reachable support; entropy gradient is singular");
      g(s) = 1.0 + std::log(o.d(s));
    }
    Vector w;
    double scale = 1.0;
    if (kind == EntropyKind::discounted) {
      w = solve_resolvent(o.p, mdp.gamma, g);
      scale = mdp.gamma;
    } else {
      std::vector<int> idx;
      for (int s = 0; s < ns; ++s)
        if (o.support[std::size_t(s)]) idx.push_back(s);
      const auto m = Eigen::Index(idx.size());
      const Matrix pr = chain_kernel(mdp, o.pi, true);
      Matrix a(m, m);
      Vector rhs(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        rhs(i) = g(idx[std::size_t(i)]);
        for (Eigen::Index j = 0; j < m; ++j)
          a(i, j) = (i == j ? 1.0 : 0.0) - pr(idx[std::size_t(i)], idx[std::size_t(j)]) + o.d(idx[std::size_t(j)]);
      }
      Eigen::PartialPivLU<Matrix> lu(a);
      const Vector y = lu.solve(rhs);
      detail::check_solution(lu, a, y, rhs, "stationary adjoint");
      w = Vector::Zero(ns);
      for (Eigen::Index i = 0; i < m; ++i) w(idx[std::size_t(i)]) = y(i);
    }
    for (int s = 0; s < ns; ++s) {
      if (o.d(s) == 0.0) continue;
      if (kind == EntropyKind::stationary && mdp.terminal[std::size_t(s)]) continue;
      for (int a = 0; a < na; ++a) g_pi(s, a) -= lambda * scale * o.d(s) * mdp.row(s, a).dot(w);
    }
  }
  return pg_detail::softmax_chain(o.pi, g_pi, fmap);
}

/// Central differences of regularized_objective, one coordinate at a time.
inline Matrix finite_diff_gradient(const TabularMdp& mdp, const SoftmaxPolicy& policy, const FeatureMap& fmap,
                                   double lambda, EntropyKind kind, double h = 1e-5) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: h must be positive");
  SoftmaxPolicy probe = policy;
  Matrix grad(policy.theta.rows(), policy.theta.cols());
  for (Eigen::Index i = 0; i < grad.rows(); ++i)
    for (Eigen::Index j = 0; j < grad.cols(); ++j) {
      const double x = policy.theta(i, j);
      probe.theta(i, j) = x + h;
      const double up = regularized_objective(mdp, probe, fmap, lambda, kind);
      probe.theta(i, j) = x - h;
      const double down = regularized_objective(mdp, probe, fmap, lambda, kind);
      probe.theta(i, j) = x;
      grad(i, j) = (up - down) / (2.0 * h);
    }
  return grad;
}

/// FNV-1a over the raw bytes of a matrix, as 16 hex digits.
inline std::string hash_matrix(const Matrix& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    unsigned char bytes[sizeof(double)];
    const double v = m.data()[i];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int k = 15; k >= 0; --k, h >>= 4) out[std::size_t(k)] = hex[h & 0xf];
  return out;
}

struct ExactPgRecord {
  int iteration = 0;
  double J = 0.0;
  double H = 0.0;
  double J_tilde = 0.0;
  double grad_inf_norm = 0.0;
  std::string theta_hash;
};

struct ExactPgTrace {
  std::vector<ExactPgRecord> records;
  SoftmaxPolicy final_policy;
  bool aborted = false;
  std::string error;
};

/// Plain gradient ascent theta <- theta + lr * grad. Record k holds the
/// objective and gradient at theta_k, before the k-th step.
inline ExactPgTrace run_exact_pg(const TabularMdp& mdp, const SoftmaxPolicy& theta0, const FeatureMap& fmap,
                                 double lambda, double lr, int iters, EntropyKind kind) {
  if (!(lr > 0.0)) throw std::invalid_argument("run_exact_pg: lr must be positive");
  if (iters < 1) throw std::invalid_argument("run_exact_pg: iters must be >= 1");
  ExactPgTrace trace;
  trace.records.reserve(std::size_t(iters));
  SoftmaxPolicy policy = theta0;
  for (int k = 0; k < iters; ++k) {
    try {
      const auto parts = regularized_objective_parts(mdp, policy, fmap, lambda, kind);
      if (!std::isfinite(parts.J_tilde)) throw std::domain_error("non-finite objective");
      const Matrix grad = analytic_gradient(mdp, policy, fmap, lambda, kind);
      if (!grad.allFinite()) throw std::domain_error("non-finite gradient");
      trace.records.push_back({k, parts.J, parts.H, parts.J_tilde, grad.cwiseAbs().maxCoeff(), hash_matrix(policy.theta)});
      policy.theta += lr * grad;
    } catch (const std::exception& e) {
      trace.aborted = true;
      trace.error = "iteration " + std::to_string(k) + ": " + e.what();
      break;
    }
  }
  trace.final_policy = std::move(policy);
  return trace;
}

}  // namespace selab

#endif  // SELAB_EXACT_PG_HPP
