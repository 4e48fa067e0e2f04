// Independent reference computations for the test suites. Nothing here calls
// the library's solvers: series sums, fixed-point iteration and plain
// std::mt19937_64 simulation only.
#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "selab/mdp.hpp"

namespace oracle {

using selab::Matrix;
using selab::TabularMdp;
using selab::Vector;

/// Dense random MDP with strictly positive kernel rows, rewards in [-1, 1], random alpha.
inline TabularMdp random_mdp(std::uint64_t seed, int n_states, int n_actions, double gamma) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  TabularMdp m = TabularMdp::zeros(n_states, n_actions, gamma);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) {
      auto row = m.row(s, a);
      for (int t = 0; t < n_states; ++t) row(t) = 0.05 + u(rng);
      row /= row.sum();
      m.reward(s, a) = 2.0 * u(rng) - 1.0;
    }
  for (int s = 0; s < n_states; ++s) m.alpha(s) = 0.1 + u(rng);
  m.alpha /= m.alpha.sum();
  return m;
}

inline Matrix random_theta(std::uint64_t seed, int rows, int cols, double scale = 1.0) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> n(0.0, scale);
  Matrix t(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) t(i, j) = n(rng);
  return t;
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double m = logits.row(i).maxCoeff(), z = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) z += std::exp(logits(i, j) - m);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) p(i, j) = std::exp(logits(i, j) - m) / z;
  }
  return p;
}

inline Matrix kernel_under(const TabularMdp& m, const Matrix& pi) {
  Matrix p = Matrix::Zero(m.n_states, m.n_states);
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a)
      for (int t = 0; t < m.n_states; ++t) p(s, t) += pi(s, a) * m.row(s, a)(t);
  return p;
}

/// (1 - gamma) sum_t gamma^t alpha^T P^t, summed until the tail is below 1e-15.
inline Vector series_occupancy(const TabularMdp& m, const Matrix& pi) {
  const Matrix p = kernel_under(m, pi);
  Vector term = m.alpha;
  Vector acc = Vector::Zero(m.n_states);
  double w = 1.0 - m.gamma;
  for (int t = 0; t < 200000 && w > 1e-17; ++t) {
    acc += w * term;
    term = p.transpose() * term;
    w *= m.gamma;
  }
  return acc;
}

/// V = r_pi + gamma P V by fixed-point iteration.
inline Vector iterated_values(const TabularMdp& m, const Matrix& pi) {
  const Matrix p = kernel_under(m, pi);
  Vector r(m.n_states);
  for (int s = 0; s < m.n_states; ++s) r(s) = pi.row(s).dot(m.reward.row(s));
  Vector v = Vector::Zero(m.n_states);
  for (int it = 0; it < 100000; ++it) {
    Vector next = r + m.gamma * p * v;
    const double d = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (d < 1e-15) break;
  }
  return v;
}

inline Matrix iterated_q(const TabularMdp& m, const Matrix& pi) {
  const Vector v = iterated_values(m, pi);
  Matrix q(m.n_states, m.n_actions);
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) q(s, a) = m.reward(s, a) + m.gamma * m.row(s, a).dot(v);
  return q;
}

/// (1/(1-gamma)) sum_s d(s) sum_a pi(a|s) grad log pi(a|s) Q(s,a), identity features.
inline Matrix pg_theorem_gradient(const TabularMdp& m, const Matrix& theta) {
  const Matrix pi = softmax_rows(theta);
  const Vector d = series_occupancy(m, pi);
  const Matrix q = iterated_q(m, pi);
  Matrix g = Matrix::Zero(theta.rows(), theta.cols());
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a)
      for (int b = 0; b < m.n_actions; ++b) {
        const double dlog = (a == b ? 1.0 : 0.0) - pi(s, b);
        g(s, b) += d(s) * pi(s, a) * dlog * q(s, a) / (1.0 - m.gamma);
      }
  return g;
}

inline int draw(const Eigen::Ref<const Vector>& p, std::mt19937_64& rng) {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng), c = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    c += p(i);
    if (u < c) return int(i);
  }
  return int(p.size() - 1);
}

struct McEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// Monte-Carlo discounted return, each rollout truncated where gamma^t < 1e-10.
inline McEstimate rollout_return(const TabularMdp& m, const Matrix& pi, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int horizon = int(std::ceil(std::log(1e-10) / std::log(m.gamma)));
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    int s = draw(m.alpha, rng);
    double g = 0.0, w = 1.0;
    for (int t = 0; t < horizon; ++t) {
      const int a = draw(pi.row(s).transpose(), rng);
      g += w * m.reward(s, a);
      w *= m.gamma;
      s = draw(m.row(s, a).transpose(), rng);
    }
    sum += g;
    sq += g * g;
  }
  const double mean = sum / n;
  return {mean, std::sqrt((sq / n - mean * mean) / (n - 1))};
}

inline double tv(const Vector& p, const Vector& q) { return 0.5 * (p - q).cwiseAbs().sum(); }

inline double rel_inf_error(const Matrix& a, const Matrix& ref) {
  const double scale = std::max(ref.cwiseAbs().maxCoeff(), 1e-12);
  return (a - ref).cwiseAbs().maxCoeff() / scale;
}

}  // namespace oracle
