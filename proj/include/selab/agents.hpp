#ifndef SELAB_AGENTS_HPP
#define SELAB_AGENTS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "selab/density.hpp"
#include "selab/environments.hpp"
#include "selab/exact_pg.hpp"
#include "selab/mdp.hpp"
#include "selab/rng.hpp"
#include "selab/state_dist.hpp"

namespace selab {

/// Tabular action-value table.
struct CriticParams {
  Matrix q;
};

/// A stored tuple; `t` is the in-episode time index.
struct Transition {
  int state = 0;
  int action = 0;
  double reward = 0.0;
  int next_state = 0;
  bool done = false;
  int t = 0;
  bool last = false;  // final tuple of its episode
};

/// Expected-SARSA TD(0):
/// q[s,a] += b * (r + gamma * (1 - done) * sum_a' pi(a'|s') q[s',a'] - q[s,a]).
inline CriticParams critic_td_update(CriticParams psi, const Transition& tr, const Vector& next_probs, double gamma,
                                     double b_k) {
  if (!(b_k >= 0.0)) throw std::invalid_argument("critic_td_update: b_k must be >= 0");
  const double bootstrap = tr.done ? 0.0 : gamma * next_probs.dot(psi.q.row(tr.next_state).transpose());
  const double delta = tr.reward + bootstrap - psi.q(tr.state, tr.action);
  psi.q(tr.state, tr.action) += b_k * delta;
  return psi;
}

/// value(k) = base * (k + 1)^(-exponent). A zero base freezes that timescale.
struct LearningRateSchedule {
  double base = 0.1;
  double exponent = 0.9;

  [[nodiscard]] double value(long k) const { return base * std::pow(double(k) + 1.0, -exponent); }

  void validate() const {
    if (!(base >= 0.0) || !(exponent > 0.0)) throw std::invalid_argument("schedule: need base >= 0 and exponent > 0");
  }
};

struct ScheduleReport {
  std::vector<std::string> violations;
  [[nodiscard]] bool ok() const { return violations.empty(); }
};

/// Analytic check of the three-timescale step-size conditions for polynomial
/// schedules: sum = inf iff p <= 1, sum of squares < inf iff p > 1/2, and the
/// actor ratio c/a, c/b vanishes iff p_c > p_a, p_b.
inline ScheduleReport validate_schedules(const LearningRateSchedule& a, const LearningRateSchedule& b,
                                         const LearningRateSchedule& c) {
  ScheduleReport rep;
  for (const auto* s : {&a, &b, &c}) s->validate();
  auto series = [&](const LearningRateSchedule& s, const std::string& n) {
    if (s.base == 0.0 || s.exponent > 1.0) rep.violations.push_back("Σ " + n + "_k < ∞");
    if (s.base > 0.0 && s.exponent <= 0.5) rep.violations.push_back("Σ " + n + "_k² = ∞");
  };
  series(a, "a");
  series(b, "b");
  series(c, "c");
  if (c.base > 0.0 && a.base > 0.0 && !(c.exponent > a.exponent)) rep.violations.push_back("c_k/a_k ↛ 0");
  if (c.base > 0.0 && b.base > 0.0 && !(c.exponent > b.exponent)) rep.violations.push_back("c_k/b_k ↛ 0");
  return rep;
}

enum class RegMode { none, pathwise, reward_bonus, policy_entropy_baseline };

inline std::string_view to_string(RegMode m) {
  switch (m) {
    case RegMode::none: return "none";
    case RegMode::pathwise: return "pathwise";
    case RegMode::reward_bonus: return "reward_bonus";
    case RegMode::policy_entropy_baseline: return "policy_entropy_baseline";
  }
  return "unknown";
}

inline RegMode parse_reg_mode(std::string_view s) {
  for (RegMode m : {RegMode::none, RegMode::pathwise, RegMode::reward_bonus, RegMode::policy_entropy_baseline})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown mode '" + std::string(s) +
                              "' (expected none|pathwise|reward_bonus|policy_entropy_baseline)");
}

/// Estimator weight of a sample at in-episode time t: (1 - gamma) gamma^t for
/// the discounted distribution, 1 for the stationary one.
inline double estimator_weight(EntropyKind kind, double gamma, int t) {
  return kind == EntropyKind::discounted ? (1.0 - gamma) * std::pow(gamma, t) : 1.0;
}

inline double policy_entropy(const Vector& probs) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i)
    if (probs(i) > 0.0) h -= probs(i) * std::log(probs(i));
  return h;
}

/// Reward the critic sees for one tuple under a regularization mode. The
/// density term is a constant with respect to theta.
inline double shaped_reward(const Transition& tr, RegMode mode, double lambda, double log_density_s,
                            const Vector& probs_s) {
  switch (mode) {
    case RegMode::reward_bonus: return tr.reward - lambda * log_density_s;
    case RegMode::policy_entropy_baseline: return tr.reward + lambda * policy_entropy(probs_s);
    default: return tr.reward;
  }
}

struct ActorInputs {
  const TabularMdp* mdp = nullptr;
  const FeatureMap* fmap = nullptr;
  const VaeParams* phi = nullptr;  // required for pathwise
  int n_z = 1;
  std::uint64_t noise_seed = 0;
  bool advantage = true;  // subtract V_psi(s) = sum_a pi(a|s) Q_psi(s,a)
};

/// Batch actor gradient: mean of grad log pi(a_t|s_t) Q_psi(s_t, a_t), minus
/// lambda * grad_theta of the weighted ELBO in pathwise mode. The bonus modes
/// act through the critic's rewards, so their actor term is the vanilla one.
inline Matrix actor_gradient(const std::vector<Transition>& batch, const CriticParams& psi,
                             const SoftmaxPolicy& policy, double lambda, RegMode mode, EntropyKind kind,
                             const ActorInputs& in) {
  if (batch.empty()) throw std::invalid_argument("actor_gradient: empty batch");
  if (psi.q.rows() != in.mdp->n_states || psi.q.cols() != in.mdp->n_actions)
    throw std::invalid_argument("actor_gradient: critic shape mismatch");
  Matrix grad = Matrix::Zero(policy.theta.rows(), policy.theta.cols());
  const double scale = 1.0 / double(batch.size());
  for (const auto& tr : batch) {
    const Vector probs = action_distribution(policy, *in.fmap, tr.state);
    Vector dlog = -probs;
    dlog(tr.action) += 1.0;
    double q = psi.q(tr.state, tr.action);
    if (in.advantage) q -= probs.dot(psi.q.row(tr.state).transpose());
    grad.row((*in.fmap)(tr.state)) += scale * q * dlog.transpose();
  }
  if (mode == RegMode::pathwise && lambda != 0.0) {
    if (in.phi == nullptr) throw std::invalid_argument("actor_gradient: pathwise mode needs density parameters");
    std::vector<WeightedState> samples;
    samples.reserve(batch.size());
    for (const auto& tr : batch) samples.push_back({tr.state, estimator_weight(kind, in.mdp->gamma, tr.t)});
    const Vector dx = batch_elbo(*in.phi, policy.flat(), samples, in.n_z, in.noise_seed).grad.input;
    if (dx.size() != policy.theta.size()) throw std::invalid_argument("actor_gradient: density input dimension mismatch");
    for (Eigen::Index i = 0; i < policy.theta.rows(); ++i)
      for (Eigen::Index j = 0; j < policy.theta.cols(); ++j) grad(i, j) -= lambda * dx(i * policy.theta.cols() + j);
  }
  if (!grad.allFinite()) throw std::domain_error("actor_gradient: non-finite gradient");
  return grad;
}

struct TrainConfig {
  EnvSpec env;
  double lambda = 0.0;
  RegMode mode = RegMode::none;
  EntropyKind kind = EntropyKind::discounted;
  LearningRateSchedule a{0.5, 0.55};  // density estimator
  LearningRateSchedule b{0.5, 0.6};   // critic
  LearningRateSchedule c{0.1, 0.9};   // actor
  int update_period = 1;
  int episodes = 100;
  int t_max = 0;        // 0: use the environment's episode cap
  long max_steps = 0;   // 0: unlimited
  bool lambda_decay = false;
  bool enforce_schedules = true;
  bool advantage = true;
  // Critic step indexed by the visit count of (s,a) rather than the global
  // update count; b at n(s,a) <= k is never smaller than b_k.
  bool critic_visit_counts = true;
  // reward_bonus: subtract a running estimate of H so the bonus is positive
  // only on states rarer than average. An all-positive bonus with a zero
  // critic init favours already-tried actions and rewards survival itself.
  bool center_bonus = true;
  double center_rate = 0.01;
  LatentConfig latent{};
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // episodes; 0 disables

  void validate() const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("train config: lambda must be >= 0");
    if (update_period < 1) throw std::invalid_argument("train config: update_period must be >= 1");
    if (episodes < 1) throw std::invalid_argument("train config: episodes must be >= 1");
    if (!(center_rate > 0.0 && center_rate <= 1.0)) throw std::invalid_argument("train config: center_rate must be in (0, 1]");
    if (t_max < 0 || max_steps < 0 || checkpoint_every < 0)
      throw std::invalid_argument("train config: t_max, max_steps and checkpoint_every must be >= 0");
    latent.validate();
    if (enforce_schedules) {
      const auto rep = validate_schedules(a, b, c);
      if (!rep.ok()) {
        std::string msg = "train config: learning-rate schedules violate the timescale conditions:";
        for (const auto& v : rep.violations) msg += " [" + v + "]";
        throw std::invalid_argument(msg);
      }
    }
  }
};

struct EpisodeMetrics {
  int episode = 0;
  long steps = 0;  // cumulative environment steps at episode end
  double ret = 0.0;
  double entropy_uniform = 0.0;
  double entropy_discounted = 0.0;
  int distinct_states = 0;
  double a_k = 0.0;
  double b_k = 0.0;
  double c_k = 0.0;
};

struct Checkpoint {
  int episode = 0;
  SoftmaxPolicy theta;
  CriticParams psi;
  VaeParams phi;
};

struct TrainResult {
  std::vector<EpisodeMetrics> episodes;
  std::vector<long> visit_counts;
  SoftmaxPolicy theta;
  CriticParams psi;
  VaeParams phi;
  std::vector<Checkpoint> checkpoints;
  long updates = 0;
  bool aborted = false;
  std::string error;

  /// Mean undiscounted return of the last `window` episodes.
  [[nodiscard]] double final_return(int window = 100) const {
    if (episodes.empty()) return 0.0;
    const auto n = std::min<std::size_t>(std::size_t(window), episodes.size());
    double acc = 0.0;
    for (std::size_t i = episodes.size() - n; i < episodes.size(); ++i) acc += episodes[i].ret;
    return acc / double(n);
  }
  [[nodiscard]] int distinct_states() const { return episodes.empty() ? 0 : episodes.back().distinct_states; }
};

namespace agent_detail {

// Noise-key streams for the density estimator, disjoint from the rollout streams.
inline constexpr std::uint64_t kPhiInitTag = 0x5e1ab0001ULL;
inline constexpr std::uint64_t kPhiUpdateTag = 0x5e1ab0002ULL;
inline constexpr std::uint64_t kBonusTag = 0x5e1ab0003ULL;
inline constexpr std::uint64_t kPathwiseTag = 0x5e1ab0004ULL;
inline constexpr std::uint64_t kMetricTag = 0x5e1ab0005ULL;

inline std::uint64_t derive(std::uint64_t seed, std::uint64_t tag, std::uint64_t k) {
  return hash_key({seed, tag, k, 0});
}

}  // namespace agent_detail

/// Three-timescale actor / critic / density-estimator loop. Every
/// `update_period` environment steps the stored tuples update the critic
/// (rate b_k), the density estimator (rate a_k) and the actor (rate c_k), in
/// that order, and are then discarded.
inline TrainResult train(const TrainConfig& cfg) {
  using namespace agent_detail;
  cfg.validate();
  const Environment env = build(cfg.env);
  const TabularMdp& mdp = env.mdp;
  const FeatureMap& fmap = env.features;
  const int t_max = cfg.t_max > 0 ? cfg.t_max : env.episode_cap;
  const double gamma = mdp.gamma;
  // Discounted sample weights carry a (1 - gamma) factor; the estimator step is
  // rescaled so both kinds move phi at comparable speed.
  const double a_scale = cfg.kind == EntropyKind::discounted ? 1.0 / (1.0 - gamma) : 1.0;

  TrainResult res;
  res.theta = SoftmaxPolicy::uniform(fmap.n_features, mdp.n_actions);
  res.psi.q = Matrix::Zero(mdp.n_states, mdp.n_actions);
  res.phi = init_vae(cfg.latent, int(res.theta.theta.size()), mdp.n_states, derive(cfg.seed, kPhiInitTag, 0));
  res.visit_counts.assign(std::size_t(mdp.n_states), 0);

  std::vector<bool> seen(std::size_t(mdp.n_states), false);
  int distinct = 0;
  auto visit = [&](int s) {
    ++res.visit_counts[std::size_t(s)];
    if (!seen[std::size_t(s)]) {
      seen[std::size_t(s)] = true;
      ++distinct;
    }
  };

  std::vector<Transition> batch;
  std::vector<long> sa_visits(std::size_t(mdp.n_states) * std::size_t(mdp.n_actions), 0);
  long global_step = 0;
  double h_running = 0.0;
  bool h_started = false;
  double a_k = 0.0, b_k = 0.0, c_k = 0.0;
  int episode = 0;

  auto update = [&]() {
    const long k = res.updates++;
    a_k = cfg.a.value(k);
    b_k = cfg.b.value(k);
    c_k = cfg.c.value(k);
    const double lambda =
        cfg.lambda_decay ? cfg.lambda * std::max(0.0, 1.0 - double(episode) / double(cfg.episodes)) : cfg.lambda;
    const Vector theta_flat = res.theta.flat();

    // critic on (possibly shaped) rewards
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Transition tr = batch[i];
      double log_d = 0.0;
      if (cfg.mode == RegMode::reward_bonus && lambda != 0.0) {
        log_d = log_density(res.phi, theta_flat, tr.state, cfg.latent.n_z_samples, derive(cfg.seed, kBonusTag, std::uint64_t(k)), i);
        if (cfg.center_bonus) {
          h_running = h_started ? h_running + cfg.center_rate * (-log_d - h_running) : -log_d;
          h_started = true;
          log_d += h_running;
        }
      }
      const Vector probs_s = action_distribution(res.theta, fmap, tr.state);
      tr.reward = shaped_reward(tr, cfg.mode, lambda, log_d, probs_s);
      double b = b_k;
      if (cfg.critic_visit_counts)
        b = cfg.b.value(sa_visits[std::size_t(tr.state) * std::size_t(mdp.n_actions) + std::size_t(tr.action)]++);
      res.psi = critic_td_update(std::move(res.psi), tr, action_distribution(res.theta, fmap, tr.next_state), gamma, b);
    }

    // density estimator on the same tuples; the final state S_T of an episode
    // is a sample too
    std::vector<WeightedState> samples;
    samples.reserve(batch.size() + 1);
    for (const auto& tr : batch) {
      samples.push_back({tr.state, estimator_weight(cfg.kind, gamma, tr.t)});
      if (tr.last) samples.push_back({tr.next_state, estimator_weight(cfg.kind, gamma, tr.t + 1)});
    }
    res.phi = update_phi(res.phi, theta_flat, samples, a_k * a_scale, cfg.latent.n_z_samples,
                         derive(cfg.seed, kPhiUpdateTag, std::uint64_t(k)), cfg.latent.max_grad_norm);

    // actor
    const ActorInputs in{&mdp, &fmap, &res.phi, cfg.latent.n_z_samples, derive(cfg.seed, kPathwiseTag, std::uint64_t(k)),
                          cfg.advantage};
    const Matrix g = actor_gradient(batch, res.psi, res.theta, lambda, cfg.mode, cfg.kind, in);
    res.theta.theta += c_k * g;
    if (!res.theta.theta.allFinite() || !res.psi.q.allFinite() || !res.phi.all_finite())
      throw std::domain_error("training diverged: non-finite parameters after update " + std::to_string(k));
    batch.clear();
  };

  try {
    for (episode = 0; episode < cfg.episodes; ++episode) {
      if (cfg.max_steps > 0 && global_step >= cfg.max_steps) break;
      const auto ep = std::uint64_t(episode);
      int s = sample_start(mdp, cfg.seed, ep);
      visit(s);
      std::vector<int> ep_states{s};
      double ret = 0.0;
      for (int t = 0; t < t_max; ++t) {
        const Vector probs = action_distribution(res.theta, fmap, s);
        const int a = sample_action(probs, cfg.seed, ep, std::uint64_t(t));
        const int next = sample_next(mdp, s, a, cfg.seed, ep, std::uint64_t(t));
        const bool done = mdp.terminal[std::size_t(next)];
        ++global_step;
        const bool last = done || t + 1 == t_max || (cfg.max_steps > 0 && global_step >= cfg.max_steps);
        batch.push_back({s, a, mdp.reward(s, a), next, done, t, last});
        ret += mdp.reward(s, a);
        visit(next);
        ep_states.push_back(next);
        if (global_step % cfg.update_period == 0) update();
        if (last) break;
        s = next;
      }

      const Vector log_d = log_density_all(res.phi, res.theta.flat(), cfg.latent.n_z_samples,
                                          derive(cfg.seed, kMetricTag, ep));
      auto lookup = [&](int st) { return log_d(st); };
      EpisodeMetrics m;
      m.episode = episode;
      m.steps = global_step;
      m.ret = ret;
      m.entropy_uniform = empirical_entropy(ep_states, lookup, Weighting::uniform, gamma);
      m.entropy_discounted = empirical_entropy(ep_states, lookup, Weighting::discounted, gamma);
      m.distinct_states = distinct;
      m.a_k = a_k;
      m.b_k = b_k;
      m.c_k = c_k;
      res.episodes.push_back(m);
      if (cfg.checkpoint_every > 0 && (episode + 1) % cfg.checkpoint_every == 0)
        res.checkpoints.push_back({episode, res.theta, res.psi, res.phi});
    }
  } catch (const std::exception& e) {
    res.aborted = true;
    res.error = e.what();
  }
  return res;
}

}  // namespace selab

#endif  // SELAB_AGENTS_HPP
