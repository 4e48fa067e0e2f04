#ifndef SELAB_DENSITY_HPP
#define SELAB_DENSITY_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "selab/mdp.hpp"
#include "selab/rng.hpp"

#include "json.hpp"

namespace selab {

struct LatentConfig {
  int z_dim = 64;
  int hidden_dim = 64;
  int n_z_samples = 1;
  double max_grad_norm = 5.0;  // per-update clip on the phi step, 0 disables

  void validate() const {
    if (z_dim < 1 || hidden_dim < 1 || n_z_samples < 1)
      throw std::invalid_argument("latent config: z_dim, hidden_dim and n_z_samples must be >= 1");
    if (!(max_grad_norm >= 0.0)) throw std::invalid_argument("latent config: max_grad_norm must be >= 0");
  }
};

/// Parameters of the density estimator q(z | theta), p(s | z).
///
/// encoder: x -> tanh(enc_w x + enc_b) -> (mu, log sigma) heads
/// decoder: z -> tanh(dec_w1 z + dec_b1) -> log_softmax(dec_w2 h + dec_b2)
struct VaeParams {
  Matrix enc_w;
  Vector enc_b;
  Matrix mu_w;
  Vector mu_b;
  Matrix logsig_w;
  Vector logsig_b;
  Matrix dec_w1;
  Vector dec_b1;
  Matrix dec_w2;
  Vector dec_b2;

  [[nodiscard]] int input_dim() const { return int(enc_w.cols()); }
  [[nodiscard]] int hidden_dim() const { return int(enc_w.rows()); }
  [[nodiscard]] int z_dim() const { return int(mu_w.rows()); }
  [[nodiscard]] int n_states() const { return int(dec_w2.rows()); }

  /// Visits every block as (name, data, size) in a fixed order.
  template <typename F>
  void for_each_block(F&& f) {
    f("enc_w", enc_w.data(), enc_w.size());
    f("enc_b", enc_b.data(), enc_b.size());
    f("mu_w", mu_w.data(), mu_w.size());
    f("mu_b", mu_b.data(), mu_b.size());
    f("logsig_w", logsig_w.data(), logsig_w.size());
    f("logsig_b", logsig_b.data(), logsig_b.size());
    f("dec_w1", dec_w1.data(), dec_w1.size());
    f("dec_b1", dec_b1.data(), dec_b1.size());
    f("dec_w2", dec_w2.data(), dec_w2.size());
    f("dec_b2", dec_b2.data(), dec_b2.size());
  }
  template <typename F>
  void for_each_block(F&& f) const {
    const_cast<VaeParams*>(this)->for_each_block(
        [&](const char* name, double* data, Eigen::Index n) { f(name, static_cast<const double*>(data), n); });
  }

  [[nodiscard]] Eigen::Index size() const {
    Eigen::Index n = 0;
    for_each_block([&](const char*, const double*, Eigen::Index k) { n += k; });
    return n;
  }

  [[nodiscard]] Vector flatten() const {
    Vector out(size());
    Eigen::Index off = 0;
    for_each_block([&](const char*, const double* d, Eigen::Index k) {
      out.segment(off, k) = Eigen::Map<const Vector>(d, k);
      off += k;
    });
    return out;
  }

  void assign_flat(const Vector& flat) {
    if (flat.size() != size()) throw std::invalid_argument("vae params: flat size mismatch");
    Eigen::Index off = 0;
    for_each_block([&](const char*, double* d, Eigen::Index k) {
      Eigen::Map<Vector>(d, k) = flat.segment(off, k);
      off += k;
    });
  }

  [[nodiscard]] bool all_finite() const {
    bool ok = true;
    for_each_block([&](const char*, const double* d, Eigen::Index k) { ok = ok && Eigen::Map<const Vector>(d, k).allFinite(); });
    return ok;
  }

  static VaeParams zeros(int input_dim, int hidden_dim, int z_dim, int n_states) {
    return {Matrix::Zero(hidden_dim, input_dim), Vector::Zero(hidden_dim), Matrix::Zero(z_dim, hidden_dim),
            Vector::Zero(z_dim),                 Matrix::Zero(z_dim, hidden_dim), Vector::Zero(z_dim),
            Matrix::Zero(hidden_dim, z_dim),     Vector::Zero(hidden_dim),        Matrix::Zero(n_states, hidden_dim),
            Vector::Zero(n_states)};
  }

  static VaeParams zeros_like(const VaeParams& p) { return zeros(p.input_dim(), p.hidden_dim(), p.z_dim(), p.n_states()); }

  VaeParams& operator+=(const VaeParams& o) {
    assign_flat(flatten() + o.flatten());
    return *this;
  }
};

/// Weights uniform in +-1/sqrt(fan_in), biases zero.
inline VaeParams init_vae(const LatentConfig& cfg, int input_dim, int n_states, std::uint64_t seed) {
  cfg.validate();
  if (input_dim < 1 || n_states < 1) throw std::invalid_argument("init_vae: dimensions must be >= 1");
  VaeParams p = VaeParams::zeros(input_dim, cfg.hidden_dim, cfg.z_dim, n_states);
  std::uint64_t block = 0;
  auto fill = [&](Matrix& w) {
    const double bound = 1.0 / std::sqrt(double(w.cols()));
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w.data()[i] = bound * (2.0 * uniform01({seed, block, std::uint64_t(i), 7}) - 1.0);
    ++block;
  };
  fill(p.enc_w);
  fill(p.mu_w);
  fill(p.logsig_w);
  fill(p.dec_w1);
  fill(p.dec_w2);
  return p;
}

struct EncoderPass {
  Vector input;     // raw theta
  Vector squashed;  // tanh(theta); bounds the input scale as the policy sharpens
  Vector hidden;  // tanh activations
  Vector mu;
  Vector logsig;
  Vector sigma;
};

struct DecoderPass {
  Vector eps;
  Vector z;
  Vector hidden;
  Vector logp;  // log_softmax of the decoder logits
};

/// Forward intermediates of one ELBO evaluation.
struct ElboCache {
  EncoderPass enc;
  std::vector<DecoderPass> dec;
  int state = 0;
  double weight = 0.0;
  double reconstruction = 0.0;  // mean over samples of log p(s | z)
  double kl = 0.0;
  double value = 0.0;
};

namespace vae_detail {

inline void require_finite(const Vector& v, const char* layer) {
  if (!v.allFinite()) throw std::domain_error(std::string("density estimator: non-finite values in ") + layer);
}

inline Vector log_softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

// Noise key: one stream per latent coordinate.
inline Vector draw_eps(int z_dim, std::uint64_t seed, std::uint64_t sample, std::uint64_t draw) {
  Vector e(z_dim);
  for (int i = 0; i < z_dim; ++i) e(i) = standard_normal({seed, sample, draw, std::uint64_t(16 + i)});
  return e;
}

}  // namespace vae_detail

inline EncoderPass encode(const VaeParams& phi, const Vector& x) {
  if (x.size() != phi.input_dim()) throw std::invalid_argument("density estimator: input dimension mismatch");
  EncoderPass e;
  e.input = x;
  e.squashed = x.array().tanh();
  e.hidden = (phi.enc_w * e.squashed + phi.enc_b).array().tanh();
  vae_detail::require_finite(e.hidden, "encoder hidden layer");
  e.mu = phi.mu_w * e.hidden + phi.mu_b;
  e.logsig = phi.logsig_w * e.hidden + phi.logsig_b;
  e.sigma = e.logsig.array().exp();
  vae_detail::require_finite(e.mu, "encoder mu head");
  vae_detail::require_finite(e.sigma, "encoder log-sigma head");
  return e;
}

inline DecoderPass decode(const VaeParams& phi, const Vector& z) {
  DecoderPass d;
  d.z = z;
  d.hidden = (phi.dec_w1 * z + phi.dec_b1).array().tanh();
  vae_detail::require_finite(d.hidden, "decoder hidden layer");
  d.logp = vae_detail::log_softmax(phi.dec_w2 * d.hidden + phi.dec_b2);
  vae_detail::require_finite(d.logp, "decoder output layer");
  return d;
}

/// KL(N(mu, sigma^2) || N(0, I)) in closed form.
inline double gaussian_kl(const EncoderPass& e) {
  return 0.5 * (e.mu.array().square() + e.sigma.array().square() - 1.0 - 2.0 * e.logsig.array()).sum();
}

namespace vae_detail {

inline ElboCache finish_elbo(const VaeParams& phi, EncoderPass enc, int s, double w, int n_z, std::uint64_t seed,
                             std::uint64_t sample) {
  if (s < 0 || s >= phi.n_states()) throw std::invalid_argument("density estimator: state out of range");
  if (!(w >= 0.0)) throw std::invalid_argument("density estimator: weight must be >= 0");
  if (n_z < 1) throw std::invalid_argument("density estimator: n_z_samples must be >= 1");
  ElboCache c;
  c.state = s;
  c.weight = w;
  c.dec.reserve(std::size_t(n_z));
  double recon = 0.0;
  for (int j = 0; j < n_z; ++j) {
    Vector eps = draw_eps(phi.z_dim(), seed, sample, std::uint64_t(j));
    Vector z = enc.mu.array() + enc.sigma.array() * eps.array();
    DecoderPass d = decode(phi, z);
    d.eps = std::move(eps);
    recon += d.logp(s);
    c.dec.push_back(std::move(d));
  }
  c.reconstruction = recon / n_z;
  c.kl = gaussian_kl(enc);
  c.enc = std::move(enc);
  c.value = w * (c.reconstruction - c.kl);
  if (!std::isfinite(c.value)) throw std::domain_error("density estimator: non-finite ELBO value");
  return c;
}

}  // namespace vae_detail

/// w * (mean_j log p(s | z_j) - KL(q(z | theta) || N(0, I))), z_j = mu + sigma * eps_j.
/// `sample` selects an independent noise stream under the same seed.
inline ElboCache elbo(const VaeParams& phi, const Vector& theta_flat, int s, double w, int n_z, std::uint64_t seed,
                      std::uint64_t sample = 0) {
  return vae_detail::finish_elbo(phi, encode(phi, theta_flat), s, w, n_z, seed, sample);
}

struct VaeGradient {
  VaeParams phi;
  Vector input;
};

namespace vae_detail {

// Decoder half of the reverse pass for one cache; accumulates into grad and
// returns d value / d z summed over the z samples through (dmu, dlogsig).
inline void decoder_backward(const VaeParams& phi, const ElboCache& c, double scale, VaeParams& grad, Vector& dmu,
                             Vector& dlogsig) {
  const double coeff = scale * c.weight / double(c.dec.size());
  for (const auto& d : c.dec) {
    Vector dlogits = -coeff * d.logp.array().exp();
    dlogits(c.state) += coeff;
    grad.dec_w2.noalias() += dlogits * d.hidden.transpose();
    grad.dec_b2 += dlogits;
    const Vector dpre = (phi.dec_w2.transpose() * dlogits).array() * (1.0 - d.hidden.array().square());
    grad.dec_w1.noalias() += dpre * d.z.transpose();
    grad.dec_b1 += dpre;
    const Vector dz = phi.dec_w1.transpose() * dpre;
    dmu += dz;
    dlogsig.array() += dz.array() * c.enc.sigma.array() * d.eps.array();
  }
  // -w * KL
  dmu -= scale * c.weight * c.enc.mu;
  dlogsig.array() -= scale * c.weight * (c.enc.sigma.array().square() - 1.0);
}

inline void encoder_backward(const VaeParams& phi, const EncoderPass& e, const Vector& dmu, const Vector& dlogsig,
                             VaeParams& grad, Vector& dinput) {
  grad.mu_w.noalias() += dmu * e.hidden.transpose();
  grad.mu_b += dmu;
  grad.logsig_w.noalias() += dlogsig * e.hidden.transpose();
  grad.logsig_b += dlogsig;
  const Vector dh = phi.mu_w.transpose() * dmu + phi.logsig_w.transpose() * dlogsig;
  const Vector dpre = dh.array() * (1.0 - e.hidden.array().square());
  grad.enc_w.noalias() += dpre * e.squashed.transpose();
  grad.enc_b += dpre;
  dinput.array() += (phi.enc_w.transpose() * dpre).array() * (1.0 - e.squashed.array().square());
}

}  // namespace vae_detail

/// Exact reverse-mode gradient of cache.value with respect to phi and the encoder input.
inline VaeGradient backprop(const VaeParams& phi, const ElboCache& cache) {
  VaeGradient g{VaeParams::zeros_like(phi), Vector::Zero(phi.input_dim())};
  Vector dmu = Vector::Zero(phi.z_dim());
  Vector dlogsig = Vector::Zero(phi.z_dim());
  vae_detail::decoder_backward(phi, cache, 1.0, g.phi, dmu, dlogsig);
  vae_detail::encoder_backward(phi, cache.enc, dmu, dlogsig, g.phi, g.input);
  return g;
}

struct WeightedState {
  int state = 0;
  double weight = 1.0;
};

struct BatchElbo {
  double mean_value = 0.0;
  VaeGradient grad;
};

/// Mean ELBO over a batch that shares one encoder input, with its gradient.
/// Sample i uses noise stream i, so the result matches averaging elbo(..., seed, i).
inline BatchElbo batch_elbo(const VaeParams& phi, const Vector& theta_flat, const std::vector<WeightedState>& batch,
                            int n_z, std::uint64_t seed, bool with_gradient = true) {
  if (batch.empty()) throw std::invalid_argument("batch_elbo: empty batch");
  const EncoderPass enc = encode(phi, theta_flat);
  BatchElbo out{0.0, {VaeParams::zeros_like(phi), Vector::Zero(phi.input_dim())}};
  Vector dmu = Vector::Zero(phi.z_dim());
  Vector dlogsig = Vector::Zero(phi.z_dim());
  const double scale = 1.0 / double(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const ElboCache c = vae_detail::finish_elbo(phi, enc, batch[i].state, batch[i].weight, n_z, seed, i);
    out.mean_value += scale * c.value;
    if (with_gradient) vae_detail::decoder_backward(phi, c, scale, out.grad.phi, dmu, dlogsig);
  }
  if (with_gradient) vae_detail::encoder_backward(phi, enc, dmu, dlogsig, out.grad.phi, out.grad.input);
  return out;
}

struct ElboSample {
  Vector theta_flat;
  int state = 0;
  double weight = 1.0;
};

namespace vae_detail {

// Rescales g to Euclidean norm at most max_norm; 0 means no clipping.
inline Vector clip_norm(Vector g, double max_norm) {
  const double n = g.norm();
  if (max_norm > 0.0 && n > max_norm) g *= max_norm / n;
  return g;
}

}  // namespace vae_detail

/// One ascent step phi + a_k * grad(mean batch ELBO), returned as a new value.
/// A positive `max_grad_norm` clips the gradient before the step.
inline VaeParams update_phi(const VaeParams& phi, const std::vector<ElboSample>& batch, double a_k, int n_z,
                            std::uint64_t seed, double max_grad_norm = 0.0) {
  if (!(a_k >= 0.0)) throw std::invalid_argument("update_phi: a_k must be >= 0");
  if (batch.empty() || a_k == 0.0) return phi;
  VaeParams grad = VaeParams::zeros_like(phi);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const ElboCache c = elbo(phi, batch[i].theta_flat, batch[i].state, batch[i].weight, n_z, seed, i);
    grad += backprop(phi, c).phi;
  }
  VaeParams next = phi;
  next.assign_flat(phi.flatten() + a_k * vae_detail::clip_norm(grad.flatten() / double(batch.size()), max_grad_norm));
  return next;
}

/// Same step for a batch sharing one policy input; encoder work is done once.
inline VaeParams update_phi(const VaeParams& phi, const Vector& theta_flat, const std::vector<WeightedState>& batch,
                            double a_k, int n_z, std::uint64_t seed, double max_grad_norm = 0.0) {
  if (!(a_k >= 0.0)) throw std::invalid_argument("update_phi: a_k must be >= 0");
  if (batch.empty() || a_k == 0.0) return phi;
  const BatchElbo b = batch_elbo(phi, theta_flat, batch, n_z, seed);
  VaeParams next = phi;
  next.assign_flat(phi.flatten() + a_k * vae_detail::clip_norm(b.grad.phi.flatten(), max_grad_norm));
  return next;
}

/// Unit-weight ELBO, the log-density proxy for a visited state.
inline double log_density(const VaeParams& phi, const Vector& theta_flat, int s, int n_z, std::uint64_t seed,
                          std::uint64_t sample = 0) {
  return elbo(phi, theta_flat, s, 1.0, n_z, seed, sample).value;
}

/// Unit-weight ELBO for every state from one encoder pass (noise stream = state index).
inline Vector log_density_all(const VaeParams& phi, const Vector& theta_flat, int n_z, std::uint64_t seed) {
  const EncoderPass enc = encode(phi, theta_flat);
  Vector out(phi.n_states());
  for (int s = 0; s < phi.n_states(); ++s)
    out(s) = vae_detail::finish_elbo(phi, enc, s, 1.0, n_z, seed, std::uint64_t(s)).value;
  return out;
}

/// Decoder marginal: average of p(s | z) over z drawn from the unit Gaussian prior.
inline Vector decoder_marginal(const VaeParams& phi, int n_prior_samples, std::uint64_t seed) {
  Vector acc = Vector::Zero(phi.n_states());
  for (int j = 0; j < n_prior_samples; ++j)
    acc += decode(phi, vae_detail::draw_eps(phi.z_dim(), seed, 0, std::uint64_t(j))).logp.array().exp().matrix();
  return acc / double(n_prior_samples);
}

// Checkpoint format: {"shape": {...}, "blocks": [names...], "data": [flat values]}.
inline void to_json(nlohmann::json& j, const VaeParams& p) {
  std::vector<std::string> names;
  p.for_each_block([&](const char* n, const double*, Eigen::Index) { names.emplace_back(n); });
  const Vector flat = p.flatten();
  j = nlohmann::json{{"shape",
                      {{"input_dim", p.input_dim()},
                       {"hidden_dim", p.hidden_dim()},
                       {"z_dim", p.z_dim()},
                       {"n_states", p.n_states()}}},
                     {"blocks", names},
                     {"data", std::vector<double>(flat.begin(), flat.end())}};
}

inline void from_json(const nlohmann::json& j, VaeParams& p) {
  const auto& sh = j.at("shape");
  p = VaeParams::zeros(sh.at("input_dim").get<int>(), sh.at("hidden_dim").get<int>(), sh.at("z_dim").get<int>(),
                       sh.at("n_states").get<int>());
  const auto data = j.at("data").get<std::vector<double>>();
  if (Eigen::Index(data.size()) != p.size()) throw std::invalid_argument("vae json: data length does not match shape");
  p.assign_flat(Eigen::Map<const Vector>(data.data(), Eigen::Index(data.size())));
}

}  // namespace selab

#endif  // SELAB_DENSITY_HPP
