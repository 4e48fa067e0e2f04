#ifndef SELAB_ENVIRONMENTS_HPP
#define SELAB_ENVIRONMENTS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "selab/mdp.hpp"
#include "selab/rng.hpp"

namespace selab {

enum class EnvName {
  two_state,
  ring,
  chain,
  gridworld_open,
  gridworld_slits,
  windy_gridworld,
  frozen_lake,
  aliased_counterexample,
};

inline constexpr std::array<std::pair<EnvName, std::string_view>, 8> kEnvNames{{
    {EnvName::two_state, "two_state"},
    {EnvName::ring, "ring"},
    {EnvName::chain, "chain"},
    {EnvName::gridworld_open, "gridworld_open"},
    {EnvName::gridworld_slits, "gridworld_slits"},
    {EnvName::windy_gridworld, "windy_gridworld"},
    {EnvName::frozen_lake, "frozen_lake"},
    {EnvName::aliased_counterexample, "aliased_counterexample"},
}};

inline std::string_view to_string(EnvName n) {
  for (const auto& [e, s] : kEnvNames)
    if (e == n) return s;
  return "unknown";
}

inline EnvName parse_env_name(std::string_view s) {
  for (const auto& [e, name] : kEnvNames)
    if (name == s) return e;
  std::string valid;
  for (const auto& [e, name] : kEnvNames) valid += (valid.empty() ? "" : ", ") + std::string(name);
  throw std::invalid_argument("unknown environment '" + std::string(s) + "'; valid names: " + valid);
}

struct EnvSpec {
  EnvName name = EnvName::two_state;
  std::map<std::string, double> params;
};

/// Grid geometry for heatmaps. Row 0 is the top row; state index = row * cols + col.
struct GridLayout {
  int rows = 0;
  int cols = 0;
  std::vector<bool> wall;  // per state
  int start = 0;
  int goal = -1;

  [[nodiscard]] int state_at(int r, int c) const { return r * cols + c; }
  [[nodiscard]] std::pair<int, int> coord(int s) const { return {s / cols, s % cols}; }
};

struct Environment {
  EnvSpec spec;
  TabularMdp mdp;
  FeatureMap features;
  std::optional<GridLayout> layout;
  int episode_cap = 100;
};

namespace env_detail {

struct ParamRange {
  std::string name;
  double lo;
  double hi;
  double fallback;
  bool integer = false;
};

class Params {
 public:
  Params(const EnvSpec& spec, std::vector<ParamRange> ranges) : ranges_(std::move(ranges)) {
    ranges_.push_back({"gamma", 1e-9, 1.0 - 1e-9, default_gamma(spec.name)});
    ranges_.push_back({"episode_cap", 1, 1e7, default_cap(spec.name), true});
    ranges_.push_back({"seed", 0, 1.8e19, 0, true});
    for (const auto& [k, v] : spec.params) {
      const auto it = std::find_if(ranges_.begin(), ranges_.end(), [&](const ParamRange& r) { return r.name == k; });
      if (it == ranges_.end() || !(v >= it->lo && v <= it->hi) || (it->integer && v != std::floor(v)))
        throw std::invalid_argument("env " + std::string(to_string(spec.name)) + ": bad parameter '" + k + "'; " +
                                    describe());
      values_[k] = v;
    }
  }

  [[nodiscard]] double get(const std::string& k) const {
    if (auto it = values_.find(k); it != values_.end()) return it->second;
    for (const auto& r : ranges_)
      if (r.name == k) return r.fallback;
    throw std::logic_error("undeclared parameter " + k);
  }
  [[nodiscard]] int get_int(const std::string& k) const { return static_cast<int>(get(k)); }

  [[nodiscard]] std::string describe() const {
    std::ostringstream os;
    os << "valid parameters:";
    for (const auto& r : ranges_) os << ' ' << r.name << " in [" << r.lo << ", " << r.hi << "]";
    return os.str();
  }

 private:
  static double default_gamma(EnvName n) {
    switch (n) {
      case EnvName::gridworld_slits:
      case EnvName::frozen_lake:
      case EnvName::windy_gridworld:
        return 0.99;
      default:
        return 0.9;
    }
  }
  static double default_cap(EnvName n) { return n == EnvName::windy_gridworld ? 200 : 100; }

  std::vector<ParamRange> ranges_;
  std::map<std::string, double> values_;
};

// Actions: 0 left, 1 down, 2 right, 3 up (row 0 is the top row).
inline constexpr std::array<std::pair<int, int>, 4> kMoves{{{0, -1}, {1, 0}, {0, 1}, {-1, 0}}};

class GridBuilder {
 public:
  GridBuilder(int rows, int cols, double gamma) : layout_{rows, cols, std::vector<bool>(std::size_t(rows * cols)), 0, -1} {
    mdp_ = TabularMdp::zeros(rows * cols, 4, gamma);
    enter_reward_.assign(std::size_t(rows * cols), 0.0);
  }

  GridLayout& layout() { return layout_; }
  void set_enter_reward(int s, double r) { enter_reward_[std::size_t(s)] = r; }
  void set_step_reward(double r) { step_reward_ = r; }
  void set_terminal(int s) { terminal_.push_back(s); }

  [[nodiscard]] int target(int s, int dir, int wind = 0) const {
    auto [r, c] = layout_.coord(s);
    int nr = r + kMoves[std::size_t(dir)].first - wind;
    int nc = c + kMoves[std::size_t(dir)].second;
    nr = std::clamp(nr, 0, layout_.rows - 1);
    nc = std::clamp(nc, 0, layout_.cols - 1);
    // Wind-free moves into walls or off-grid leave the agent in place.
    if (wind == 0 && (r + kMoves[std::size_t(dir)].first != nr || c + kMoves[std::size_t(dir)].second != nc)) return s;
    const int t = layout_.state_at(nr, nc);
    return layout_.wall[std::size_t(t)] ? s : t;
  }

  /// Sets the (s, a) row from a list of (direction, probability) outcomes.
  void set_moves(int s, int a, const std::vector<std::pair<int, double>>& outcomes, int wind = 0) {
    auto row = mdp_.row(s, a);
    row.setZero();
    for (auto [dir, p] : outcomes) row(target(s, dir, wind)) += p;
  }

  /// Moves with probability (1 - slip) in the intended direction, otherwise uniformly.
  void set_slip_dynamics(double slip) {
    for (int s = 0; s < mdp_.n_states; ++s)
      for (int a = 0; a < 4; ++a) {
        std::vector<std::pair<int, double>> out{{a, 1.0 - slip}};
        for (int d = 0; d < 4; ++d) out.emplace_back(d, slip / 4.0);
        set_moves(s, a, out);
      }
  }

  Environment finish(EnvSpec spec, int cap) {
    const int n = mdp_.n_states;
    for (int s = 0; s < n; ++s) {
      if (layout_.wall[std::size_t(s)]) {
        for (int a = 0; a < 4; ++a) {
          mdp_.row(s, a).setZero();
          mdp_.row(s, a)(s) = 1.0;
        }
        continue;
      }
      for (int a = 0; a < 4; ++a) {
        double r = step_reward_;
        for (int t = 0; t < n; ++t) r += mdp_.row(s, a)(t) * enter_reward_[std::size_t(t)];
        mdp_.reward(s, a) = r;
      }
    }
    for (int s : terminal_) mdp_.make_terminal(s);
    mdp_.alpha = Vector::Zero(n);
    mdp_.alpha(layout_.start) = 1.0;
    Environment env{std::move(spec), std::move(mdp_), FeatureMap::identity(n), layout_, cap};
    return env;
  }

 private:
  GridLayout layout_;
  TabularMdp mdp_;
  std::vector<double> enter_reward_;
  std::vector<int> terminal_;
  double step_reward_ = 0.0;
};

inline Environment build_two_state(const EnvSpec& spec) {
  Params p(spec, {});
  // Fixed fixture: in s0, action 0 stays for a small reward and action 1 heads
  // to s1; in s1, action 0 mostly stays for the large reward and action 1 leaves.
  TabularMdp m = TabularMdp::zeros(2, 2, p.get("gamma"));
  m.row(0, 0) << 1.0, 0.0;
  m.row(0, 1) << 0.2, 0.8;
  m.row(1, 0) << 0.1, 0.9;
  m.row(1, 1) << 1.0, 0.0;
  m.reward << 0.3, 0.0, 1.0, 0.0;
  m.alpha << 1.0, 0.0;
  return {spec, std::move(m), FeatureMap::identity(2), std::nullopt, p.get_int("episode_cap")};
}

inline Environment build_ring(const EnvSpec& spec) {
  Params p(spec, {{"n", 3, 1000, 8, true}, {"slip", 0, 1, 0}});
  const int n = p.get_int("n");
  const double slip = p.get("slip");
  TabularMdp m = TabularMdp::zeros(n, 2, p.get("gamma"));
  for (int s = 0; s < n; ++s) {
    const int left = (s + n - 1) % n;
    const int right = (s + 1) % n;
    m.row(s, 0)(left) += 1.0 - slip / 2.0;
    m.row(s, 0)(right) += slip / 2.0;
    m.row(s, 1)(right) += 1.0 - slip / 2.0;
    m.row(s, 1)(left) += slip / 2.0;
  }
  return {spec, std::move(m), FeatureMap::identity(n), std::nullopt, p.get_int("episode_cap")};
}

inline Environment build_chain(const EnvSpec& spec) {
  Params p(spec, {{"n", 2, 1000, 5, true}, {"slip", 0, 1, 0}});
  const int n = p.get_int("n");
  const double slip = p.get("slip");
  TabularMdp m = TabularMdp::zeros(n, 2, p.get("gamma"));
  for (int s = 0; s < n - 1; ++s) {
    const int left = std::max(s - 1, 0);
    const int right = s + 1;
    m.row(s, 0)(left) += 1.0 - slip / 2.0;
    m.row(s, 0)(right) += slip / 2.0;
    m.row(s, 1)(right) += 1.0 - slip / 2.0;
    m.row(s, 1)(left) += slip / 2.0;
    for (int a = 0; a < 2; ++a) m.reward(s, a) = m.row(s, a)(n - 1);
  }
  m.make_terminal(n - 1);
  m.alpha = Vector::Zero(n);
  m.alpha(0) = 1.0;
  return {spec, std::move(m), FeatureMap::identity(n), std::nullopt, p.get_int("episode_cap")};
}

inline Environment build_gridworld_open(const EnvSpec& spec) {
  Params p(spec, {{"rows", 2, 50, 4, true}, {"cols", 2, 50, 4, true}, {"slip", 0, 1, 0}, {"terminal_goal", 0, 1, 1, true}});
  const int rows = p.get_int("rows");
  const int cols = p.get_int("cols");
  GridBuilder g(rows, cols, p.get("gamma"));
  g.layout().start = g.layout().state_at(rows - 1, 0);
  g.layout().goal = g.layout().state_at(0, cols - 1);
  g.set_slip_dynamics(p.get("slip"));
  g.set_enter_reward(g.layout().goal, 1.0);
  if (p.get_int("terminal_goal") == 1) g.set_terminal(g.layout().goal);
  return g.finish(spec, p.get_int("episode_cap"));
}

inline constexpr int kSlitsSize = 11;
inline constexpr std::array<int, 2> kSlitWallCols{3, 7};
inline constexpr std::array<int, 2> kSlitRows{2, 8};

inline Environment build_gridworld_slits(const EnvSpec& spec) {
  Params p(spec, {{"slip", 0, 1, 0}});
  GridBuilder g(kSlitsSize, kSlitsSize, p.get("gamma"));
  auto& lay = g.layout();
  for (int c : kSlitWallCols)
    for (int r = 0; r < kSlitsSize; ++r)
      if (std::find(kSlitRows.begin(), kSlitRows.end(), r) == kSlitRows.end()) lay.wall[std::size_t(lay.state_at(r, c))] = true;
  lay.start = lay.state_at(kSlitsSize - 1, 0);
  lay.goal = lay.state_at(0, kSlitsSize - 1);
  g.set_slip_dynamics(p.get("slip"));
  g.set_enter_reward(lay.goal, 1.0);
  g.set_terminal(lay.goal);
  return g.finish(spec, p.get_int("episode_cap"));
}

inline Environment build_windy_gridworld(const EnvSpec& spec) {
  Params p(spec, {});
  constexpr std::array<int, 10> winds{0, 0, 0, 1, 1, 1, 2, 2, 1, 0};
  GridBuilder g(7, 10, p.get("gamma"));
  auto& lay = g.layout();
  lay.start = lay.state_at(3, 0);
  lay.goal = lay.state_at(3, 7);
  for (int s = 0; s < 70; ++s)
    for (int a = 0; a < 4; ++a) g.set_moves(s, a, {{a, 1.0}}, winds[std::size_t(s % 10)]);
  g.set_step_reward(-1.0);
  g.set_terminal(lay.goal);
  return g.finish(spec, p.get_int("episode_cap"));
}

inline constexpr std::array<std::string_view, 4> kFrozenLakeMap{"SFFF", "FHFH", "FFFH", "HFFG"};

inline Environment build_frozen_lake(const EnvSpec& spec) {
  Params p(spec, {{"slippery", 0, 1, 1, true}});
  const bool slippery = p.get_int("slippery") == 1;
  GridBuilder g(4, 4, p.get("gamma"));
  auto& lay = g.layout();
  lay.start = 0;
  lay.goal = 15;
  for (int s = 0; s < 16; ++s)
    for (int a = 0; a < 4; ++a) {
      if (slippery)
        g.set_moves(s, a, {{(a + 3) % 4, 1.0 / 3.0}, {a, 1.0 / 3.0}, {(a + 1) % 4, 1.0 / 3.0}});
      else
        g.set_moves(s, a, {{a, 1.0}});
    }
  g.set_enter_reward(15, 1.0);
  for (int s = 0; s < 16; ++s)
    if (kFrozenLakeMap[std::size_t(s / 4)][std::size_t(s % 4)] == 'H' || s == 15) g.set_terminal(s);
  return g.finish(spec, p.get_int("episode_cap"));
}

/// s0 -> {s1, s2} by action; s1 and s2 share a feature row but prefer opposite actions.
inline Environment build_aliased(const EnvSpec& spec) {
  Params p(spec, {});
  TabularMdp m = TabularMdp::zeros(4, 2, p.get("gamma"));
  m.row(0, 0)(1) = 1.0;
  m.row(0, 1)(2) = 1.0;
  for (int s : {1, 2})
    for (int a = 0; a < 2; ++a) m.row(s, a)(3) = 1.0;
  m.reward(1, 0) = 2.0;
  m.reward(2, 1) = 1.0;
  m.make_terminal(3);
  m.alpha = Vector::Zero(4);
  m.alpha(0) = 1.0;
  FeatureMap f{{0, 1, 1, 2}, 3};
  return {spec, std::move(m), std::move(f), std::nullopt, p.get_int("episode_cap")};
}

}  // namespace env_detail

/// Builds one of the catalog environments; throws std::invalid_argument with the
/// valid ranges on a bad name or parameter.
inline Environment build(const EnvSpec& spec) {
  using namespace env_detail;
  Environment env = [&] {
    switch (spec.name) {
      case EnvName::two_state: return build_two_state(spec);
      case EnvName::ring: return build_ring(spec);
      case EnvName::chain: return build_chain(spec);
      case EnvName::gridworld_open: return build_gridworld_open(spec);
      case EnvName::gridworld_slits: return build_gridworld_slits(spec);
      case EnvName::windy_gridworld: return build_windy_gridworld(spec);
      case EnvName::frozen_lake: return build_frozen_lake(spec);
      case EnvName::aliased_counterexample: return build_aliased(spec);
    }
    throw std::invalid_argument("unknown environment");
  }();
  env.mdp.validate();
  env.features.validate(env.mdp.n_states);
  return env;
}

inline void to_json(nlohmann::json& j, const EnvSpec& e) {
  j = nlohmann::json{{"name", std::string(to_string(e.name))}, {"params", e.params}};
}

inline void from_json(const nlohmann::json& j, EnvSpec& e) {
  e.name = parse_env_name(j.at("name").get<std::string>());
  e.params.clear();
  if (j.contains("params")) e.params = j.at("params").get<std::map<std::string, double>>();
}

// ---------------------------------------------------------------------------
// Rollouts

struct Step {
  int state = 0;
  int action = 0;
  double reward = 0.0;
  int next_state = 0;
  bool done = false;
};

struct Trajectory {
  std::vector<Step> steps;

  /// S_0 .. S_T: every visited state including the final next state.
  [[nodiscard]] std::vector<int> states() const {
    std::vector<int> out;
    out.reserve(steps.size() + 1);
    for (const auto& st : steps) out.push_back(st.state);
    if (!steps.empty()) out.push_back(steps.back().next_state);
    return out;
  }
};

// Stream ids for the counter generator.
inline constexpr std::uint64_t kStreamStart = 0;
inline constexpr std::uint64_t kStreamAction = 1;
inline constexpr std::uint64_t kStreamTransition = 2;

inline int sample_start(const TabularMdp& mdp, std::uint64_t seed, std::uint64_t episode) {
  return sample_index({mdp.alpha.data(), std::size_t(mdp.alpha.size())}, uniform01({seed, episode, 0, kStreamStart}));
}

inline int sample_action(const Vector& probs, std::uint64_t seed, std::uint64_t episode, std::uint64_t step) {
  return sample_index({probs.data(), std::size_t(probs.size())}, uniform01({seed, episode, step, kStreamAction}));
}

inline int sample_next(const TabularMdp& mdp, int s, int a, std::uint64_t seed, std::uint64_t episode,
                       std::uint64_t step) {
  const auto row = mdp.row(s, a);
  return sample_index({row.data(), std::size_t(row.size())}, uniform01({seed, episode, step, kStreamTransition}));
}

/// Rolls out pi from alpha until a terminal state or t_max steps.
inline Trajectory sample_trajectory(const TabularMdp& mdp, const SoftmaxPolicy& policy, const FeatureMap& fmap,
                                    int t_max, std::uint64_t seed, std::uint64_t episode = 0) {
  if (t_max < 1) throw std::invalid_argument("sample_trajectory: t_max must be >= 1");
  const Matrix pi = policy_table(mdp, policy, fmap);
  Trajectory traj;
  int s = sample_start(mdp, seed, episode);
  for (int t = 0; t < t_max; ++t) {
    const Vector probs = pi.row(s).transpose();
    const int a = sample_action(probs, seed, episode, std::uint64_t(t));
    const int next = sample_next(mdp, s, a, seed, episode, std::uint64_t(t));
    const bool done = mdp.terminal[std::size_t(next)];
    traj.steps.push_back({s, a, mdp.reward(s, a), next, done});
    if (done) break;
    s = next;
  }
  return traj;
}

}  // namespace selab

#endif  // SELAB_ENVIRONMENTS_HPP
