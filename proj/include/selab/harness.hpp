#ifndef SELAB_HARNESS_HPP
#define SELAB_HARNESS_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "json.hpp"
#include "selab/agents.hpp"
#include "selab/density.hpp"
#include "selab/environments.hpp"
#include "selab/exact_pg.hpp"
#include "selab/mdp.hpp"
#include "selab/state_dist.hpp"

namespace selab {

namespace fs = std::filesystem;
using nlohmann::json;

/// Thrown for schema problems; carries one message per offending field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> errors)
      : std::runtime_error(join(errors)), errors_(std::move(errors)) {}
  [[nodiscard]] const std::vector<std::string>& errors() const { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& e) {
    std::string out = "invalid config:";
    for (const auto& s : e) out += "\n  " + s;
    return out;
  }
  std::vector<std::string> errors_;
};

enum class InitKind { uniform, random, biased };

struct ExactPgSettings {
  double lambda = 0.0;
  double lr = 0.01;
  int iters = 1000;
  EntropyKind kind = EntropyKind::discounted;
  InitKind init = InitKind::uniform;
  double init_scale = 1.0;  // random: N(0, scale^2) logits; biased: logit on `init_action`
  int init_action = 0;
};

struct ExperimentConfig {
  EnvSpec env;
  std::variant<TrainConfig, ExactPgSettings> method;
  int final_window = 100;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs/out";
  std::set<std::string> emit{"metrics"};

  [[nodiscard]] bool is_exact_pg() const { return std::holds_alternative<ExactPgSettings>(method); }
  [[nodiscard]] bool emits(const std::string& k) const { return emit.count(k) > 0; }
};

inline const std::set<std::string> kEmitKinds{"metrics", "heatmap", "distributions", "checkpoints"};

// ---------------------------------------------------------------------------
// parsing

namespace harness_detail {

// Collects field-level diagnostics instead of stopping at the first one.
class Reader {
 public:
  std::vector<std::string> errors;

  void fail(const std::string& path, const std::string& msg) { errors.push_back(path + ": " + msg); }

  void allow_only(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
    if (!j.is_object()) return;
    for (const auto& [k, v] : j.items())
      if (std::find_if(keys.begin(), keys.end(), [&](const char* x) { return k == x; }) == keys.end())
        fail(path + "." + k, "unknown field");
  }

  template <class T>
  void get(const json& j, const std::string& path, const char* key, T& out) {
    if (!j.is_object() || !j.contains(key)) return;
    try {
      out = j.at(key).get<T>();
    } catch (const std::exception&) {
      fail(path + "." + key, std::string("wrong type (expected ") + type_name<T>() + ")");
    }
  }

  void number(const json& j, const std::string& path, const char* key, double& out, double lo, double hi) {
    get(j, path, key, out);
    if (j.is_object() && j.contains(key) && !(out >= lo && out <= hi))
      fail(path + "." + key, "out of range [" + fmt(lo) + ", " + fmt(hi) + "]");
  }

  void integer(const json& j, const std::string& path, const char* key, int& out, int lo, int hi) {
    if (!j.is_object() || !j.contains(key)) return;
    if (!j.at(key).is_number_integer()) return fail(path + "." + key, "wrong type (expected integer)");
    const auto v = j.at(key).get<long long>();
    if (v < lo || v > hi) return fail(path + "." + key, "out of range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    out = int(v);
  }

  template <class E>
  void choice(const json& j, const std::string& path, const char* key, E& out, E (*parse)(std::string_view)) {
    if (!j.is_object() || !j.contains(key)) return;
    if (!j.at(key).is_string()) return fail(path + "." + key, "wrong type (expected string)");
    try {
      out = parse(j.at(key).get<std::string>());
    } catch (const std::exception& e) {
      fail(path + "." + key, e.what());
    }
  }

 private:
  template <class T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "boolean";
    else if constexpr (std::is_arithmetic_v<T>) return "number";
    else return "string";
  }
  static std::string fmt(double x) {
    std::ostringstream os;
    os << x;
    return os.str();
  }
};

inline InitKind parse_init_kind(std::string_view s) {
  if (s == "uniform") return InitKind::uniform;
  if (s == "random") return InitKind::random;
  if (s == "biased") return InitKind::biased;
  throw std::invalid_argument("unknown init '" + std::string(s) + "' (expected uniform|random|biased)");
}

inline std::string_view to_string(InitKind k) {
  switch (k) {
    case InitKind::uniform: return "uniform";
    case InitKind::random: return "random";
    case InitKind::biased: return "biased";
  }
  return "unknown";
}

inline void read_schedule(Reader& r, const json& j, const std::string& path, LearningRateSchedule& s) {
  if (!j.is_object()) return r.fail(path, "expected object {base, exponent}");
  r.allow_only(j, path, {"base", "exponent"});
  r.number(j, path, "base", s.base, 0.0, 1e9);
  r.number(j, path, "exponent", s.exponent, 1e-9, 1e3);
}

inline void read_actor_critic(Reader& r, const json& m, TrainConfig& t) {
  const std::string p = "method";
  r.allow_only(m, p,
               {"type", "lambda", "mode", "kind", "schedules", "update_period", "episodes", "t_max", "max_steps",
                "lambda_decay", "enforce_schedules", "advantage", "critic_visit_counts", "center_bonus",
                "center_rate", "latent", "checkpoint_every"});
  r.number(m, p, "lambda", t.lambda, 0.0, 1e6);
  r.choice(m, p, "mode", t.mode, &parse_reg_mode);
  r.choice(m, p, "kind", t.kind, &parse_entropy_kind);
  r.integer(m, p, "update_period", t.update_period, 1, 1'000'000);
  r.integer(m, p, "episodes", t.episodes, 1, 100'000'000);
  r.integer(m, p, "t_max", t.t_max, 0, 100'000'000);
  if (m.contains("max_steps")) {
    if (!m.at("max_steps").is_number_integer() || m.at("max_steps").get<long long>() < 0)
      r.fail(p + ".max_steps", "expected integer >= 0");
    else
      t.max_steps = m.at("max_steps").get<long>();
  }
  r.get(m, p, "lambda_decay", t.lambda_decay);
  r.get(m, p, "enforce_schedules", t.enforce_schedules);
  r.get(m, p, "advantage", t.advantage);
  r.get(m, p, "critic_visit_counts", t.critic_visit_counts);
  r.get(m, p, "center_bonus", t.center_bonus);
  r.number(m, p, "center_rate", t.center_rate, 1e-12, 1.0);
  r.integer(m, p, "checkpoint_every", t.checkpoint_every, 0, 100'000'000);
  if (m.contains("schedules")) {
    const json& s = m.at("schedules");
    const std::string sp = p + ".schedules";
    if (!s.is_object()) {
      r.fail(sp, "expected object {a, b, c}");
    } else {
      r.allow_only(s, sp, {"a", "b", "c"});
      if (s.contains("a")) read_schedule(r, s.at("a"), sp + ".a", t.a);
      if (s.contains("b")) read_schedule(r, s.at("b"), sp + ".b", t.b);
      if (s.contains("c")) read_schedule(r, s.at("c"), sp + ".c", t.c);
    }
  }
  if (m.contains("latent")) {
    const json& l = m.at("latent");
    const std::string lp = p + ".latent";
    r.allow_only(l, lp, {"z_dim", "hidden_dim", "n_z_samples", "max_grad_norm"});
    r.integer(l, lp, "z_dim", t.latent.z_dim, 1, 4096);
    r.integer(l, lp, "hidden_dim", t.latent.hidden_dim, 1, 4096);
    r.integer(l, lp, "n_z_samples", t.latent.n_z_samples, 1, 4096);
    r.number(l, lp, "max_grad_norm", t.latent.max_grad_norm, 0.0, 1e12);
  }
  if (t.mode == RegMode::none && t.lambda != 0.0) r.fail(p + ".lambda", "must be 0 when mode is none");
  if (t.enforce_schedules) {
    const auto rep = validate_schedules(t.a, t.b, t.c);
    for (const auto& v : rep.violations) r.fail(p + ".schedules", "timescale condition violated: " + v);
  }
}

inline void read_exact_pg(Reader& r, const json& m, ExactPgSettings& e) {
  const std::string p = "method";
  r.allow_only(m, p, {"type", "lambda", "lr", "iters", "kind", "init", "init_scale", "init_action"});
  r.number(m, p, "lambda", e.lambda, 0.0, 1e6);
  r.number(m, p, "lr", e.lr, 1e-12, 1e6);
  r.integer(m, p, "iters", e.iters, 1, 100'000'000);
  r.choice(m, p, "kind", e.kind, &parse_entropy_kind);
  r.choice(m, p, "init", e.init, &parse_init_kind);
  r.number(m, p, "init_scale", e.init_scale, 0.0, 1e6);
  r.integer(m, p, "init_action", e.init_action, 0, 1'000'000);
}

}  // namespace harness_detail

/// Parses and validates a config document. Every problem found is reported.
inline ExperimentConfig parse_config(const json& j) {
  using harness_detail::Reader;
  Reader r;
  ExperimentConfig cfg;
  if (!j.is_object()) throw ConfigError({"<root>: expected a JSON object"});
  r.allow_only(j, "<root>", {"env", "method", "seeds", "output_dir", "emit", "final_window"});

  if (!j.contains("env")) {
    r.fail("env", "missing required field");
  } else {
    const json& e = j.at("env");
    r.allow_only(e, "env", {"name", "params"});
    if (!e.is_object() || !e.contains("name") || !e.at("name").is_string()) {
      r.fail("env.name", "missing or not a string");
    } else {
      try {
        cfg.env.name = parse_env_name(e.at("name").get<std::string>());
      } catch (const std::exception& ex) {
        r.fail("env.name", ex.what());
      }
      if (e.contains("params")) {
        try {
          cfg.env.params = e.at("params").get<std::map<std::string, double>>();
          (void)build(cfg.env);
        } catch (const std::exception& ex) {
          r.fail("env.params", ex.what());
        }
      }
    }
  }

  if (!j.contains("method") || !j.at("method").is_object() || !j.at("method").contains("type")) {
    r.fail("method.type", "missing (expected actor_critic|exact_pg)");
  } else {
    const json& m = j.at("method");
    const std::string type = m.at("type").is_string() ? m.at("type").get<std::string>() : "";
    if (type == "actor_critic") {
      TrainConfig t;
      harness_detail::read_actor_critic(r, m, t);
      cfg.method = t;
    } else if (type == "exact_pg") {
      ExactPgSettings e;
      harness_detail::read_exact_pg(r, m, e);
      cfg.method = e;
    } else {
      r.fail("method.type", "unknown method '" + type + "' (expected actor_critic|exact_pg)");
    }
  }

  if (j.contains("seeds")) {
    const json& s = j.at("seeds");
    if (!s.is_array() || s.empty()) {
      r.fail("seeds", "expected a nonempty array of nonnegative integers");
    } else {
      cfg.seeds.clear();
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (!s[i].is_number_integer() || s[i].get<long long>() < 0) r.fail("seeds[" + std::to_string(i) + "]", "expected a nonnegative integer");
        else cfg.seeds.push_back(s[i].get<std::uint64_t>());
      }
      if (std::set<std::uint64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size())
        r.fail("seeds", "duplicate seed");
    }
  }
  r.get(j, "<root>", "output_dir", cfg.output_dir);
  if (cfg.output_dir.empty()) r.fail("output_dir", "must be nonempty");
  r.integer(j, "<root>", "final_window", cfg.final_window, 1, 100'000'000);
  if (j.contains("emit")) {
    const json& e = j.at("emit");
    if (!e.is_array()) {
      r.fail("emit", "expected an array");
    } else {
      cfg.emit.clear();
      for (std::size_t i = 0; i < e.size(); ++i) {
        const std::string k = e[i].is_string() ? e[i].get<std::string>() : "";
        if (kEmitKinds.count(k) == 0)
          r.fail("emit[" + std::to_string(i) + "]", "expected one of metrics|heatmap|distributions|checkpoints");
        else
          cfg.emit.insert(k);
      }
    }
  }
  if (!r.errors.empty()) throw ConfigError(r.errors);
  if (auto* t = std::get_if<TrainConfig>(&cfg.method)) t->env = cfg.env;
  return cfg;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({path.string() + ": cannot open"});
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  }
  return parse_config(j);
}

/// Normalized document with every default filled in.
inline json to_json_doc(const ExperimentConfig& cfg) {
  json j;
  j["env"] = cfg.env;
  if (const auto* t = std::get_if<TrainConfig>(&cfg.method)) {
    auto sched = [](const LearningRateSchedule& s) { return json{{"base", s.base}, {"exponent", s.exponent}}; };
    j["method"] = {{"type", "actor_critic"},
                   {"lambda", t->lambda},
                   {"mode", std::string(to_string(t->mode))},
                   {"kind", std::string(to_string(t->kind))},
                   {"schedules", {{"a", sched(t->a)}, {"b", sched(t->b)}, {"c", sched(t->c)}}},
                   {"update_period", t->update_period},
                   {"episodes", t->episodes},
                   {"t_max", t->t_max},
                   {"max_steps", t->max_steps},
                   {"lambda_decay", t->lambda_decay},
                   {"enforce_schedules", t->enforce_schedules},
                   {"advantage", t->advantage},
                   {"critic_visit_counts", t->critic_visit_counts},
                   {"center_bonus", t->center_bonus},
                   {"center_rate", t->center_rate},
                   {"latent",
                    {{"z_dim", t->latent.z_dim},
                     {"hidden_dim", t->latent.hidden_dim},
                     {"n_z_samples", t->latent.n_z_samples},
                     {"max_grad_norm", t->latent.max_grad_norm}}},
                   {"checkpoint_every", t->checkpoint_every}};
  } else {
    const auto& e = std::get<ExactPgSettings>(cfg.method);
    j["method"] = {{"type", "exact_pg"},         {"lambda", e.lambda},
                   {"lr", e.lr},                 {"iters", e.iters},
                   {"kind", std::string(to_string(e.kind))},
                   {"init", std::string(harness_detail::to_string(e.init))},
                   {"init_scale", e.init_scale}, {"init_action", e.init_action}};
  }
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  j["emit"] = cfg.emit;
  j["final_window"] = cfg.final_window;
  return j;
}

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// Hash of the normalized config without the fields that do not affect results.
inline std::string config_hash(const ExperimentConfig& cfg) {
  json j = to_json_doc(cfg);
  j.erase("output_dir");
  j.erase("emit");
  return fnv1a_hex(j.dump());
}

// ---------------------------------------------------------------------------
// files

/// Writes via a sibling temp file and rename, so readers never see a partial file.
inline void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  static std::atomic<unsigned> counter{0};
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(counter++) + "_" +
         std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()) % 100000);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string fmt_double(double x) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << x;
  return os.str();
}

inline std::string metrics_csv(const std::vector<EpisodeMetrics>& eps) {
  std::ostringstream os;
  os << "episode,steps,return,empirical_entropy_uniform,empirical_entropy_discounted,distinct_states_so_far,a_k,b_k,c_k\n";
  for (const auto& m : eps)
    os << m.episode << ',' << m.steps << ',' << fmt_double(m.ret) << ',' << fmt_double(m.entropy_uniform) << ','
       << fmt_double(m.entropy_discounted) << ',' << m.distinct_states << ',' << fmt_double(m.a_k) << ','
       << fmt_double(m.b_k) << ',' << fmt_double(m.c_k) << '\n';
  return os.str();
}

inline std::string trace_csv(const std::vector<ExactPgRecord>& recs) {
  std::ostringstream os;
  os << "iteration,J,H,J_tilde,grad_inf_norm,theta_hash\n";
  for (const auto& r : recs)
    os << r.iteration << ',' << fmt_double(r.J) << ',' << fmt_double(r.H) << ',' << fmt_double(r.J_tilde) << ','
       << fmt_double(r.grad_inf_norm) << ',' << r.theta_hash << '\n';
  return os.str();
}

/// Minimal CSV reader for files this module writes: header row plus numeric or bare-string cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::invalid_argument("csv: no column " + name);
    return std::size_t(it - header.begin());
  }
  [[nodiscard]] std::vector<double> numbers(const std::string& name) const {
    const auto c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(std::stod(r.at(c)));
    return out;
  }
};

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  CsvTable t;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::stringstream ss(l);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    return cells;
  };
  if (std::getline(in, line)) t.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split(line));
  return t;
}

inline json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(row);
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw std::invalid_argument("matrix json: expected nested arrays");
  Matrix m(Eigen::Index(j.size()), Eigen::Index(j[0].size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != j[0].size()) throw std::invalid_argument("matrix json: ragged rows");
    for (std::size_t k = 0; k < j[i].size(); ++k) m(Eigen::Index(i), Eigen::Index(k)) = j[i][k].get<double>();
  }
  return m;
}

// ---------------------------------------------------------------------------
// heatmaps

struct HeatmapFiles {
  std::string csv;
  std::optional<std::string> pgm;  // absent for non-grid environments
};

/// Visit counts laid out on the grid (walls 0) plus an 8-bit PGM scaled
/// min-max over the open cells. Without a layout only (state, count) rows.
inline HeatmapFiles render_heatmap(const std::vector<long>& counts, const std::optional<GridLayout>& layout) {
  HeatmapFiles out;
  std::ostringstream csv;
  if (!layout) {
    csv << "state,count\n";
    for (std::size_t s = 0; s < counts.size(); ++s) csv << s << ',' << counts[s] << '\n';
    out.csv = csv.str();
    return out;
  }
  const GridLayout& g = *layout;
  if (std::size_t(g.rows * g.cols) != counts.size()) throw std::invalid_argument("heatmap: layout does not match counts");
  long lo = std::numeric_limits<long>::max(), hi = std::numeric_limits<long>::min();
  for (int s = 0; s < g.rows * g.cols; ++s) {
    if (g.wall[std::size_t(s)]) continue;
    lo = std::min(lo, counts[std::size_t(s)]);
    hi = std::max(hi, counts[std::size_t(s)]);
  }
  std::string pgm = "P5\n" + std::to_string(g.cols) + " " + std::to_string(g.rows) + "\n255\n";
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      const int s = g.state_at(r, c);
      const long v = g.wall[std::size_t(s)] ? 0 : counts[std::size_t(s)];
      csv << (c ? "," : "") << v;
      unsigned char px = 0;
      if (!g.wall[std::size_t(s)] && hi > lo) px = static_cast<unsigned char>(std::lround(255.0 * double(v - lo) / double(hi - lo)));
      pgm.push_back(static_cast<char>(px));
    }
    csv << '\n';
  }
  out.csv = csv.str();
  out.pgm = std::move(pgm);
  return out;
}

/// Grid of state indices, for aligning any per-state CSV to the layout.
inline std::string layout_csv(const GridLayout& g) {
  std::ostringstream os;
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) os << (c ? "," : "") << g.state_at(r, c);
    os << '\n';
  }
  return os.str();
}

inline void emit_heatmap(const std::vector<long>& counts, const std::optional<GridLayout>& layout, const fs::path& dir) {
  const HeatmapFiles f = render_heatmap(counts, layout);
  write_atomic(dir / (layout ? "heatmap.csv" : "visits.csv"), f.csv);
  if (f.pgm) write_atomic(dir / "heatmap.pgm", *f.pgm);
  if (layout) write_atomic(dir / "layout.csv", layout_csv(*layout));
}

// ---------------------------------------------------------------------------
// running

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  std::map<std::string, double> finals;
  // per-episode (or per-iteration) series kept for sweeps
  std::vector<double> curve;
};

struct RunSummary {
  std::string config_hash;
  std::vector<SeedOutcome> seeds;
  std::map<std::string, std::pair<double, double>> aggregate;  // metric -> (mean, stderr)
  double wall_clock_seconds = 0.0;

  [[nodiscard]] bool all_ok() const {
    return std::all_of(seeds.begin(), seeds.end(), [](const SeedOutcome& s) { return s.ok; });
  }
};

/// Mean and std / sqrt(n) with the sample (n - 1) standard deviation; 0 stderr for n = 1.
inline std::pair<double, double> mean_stderr(const std::vector<double>& xs) {
  if (xs.empty()) return {std::nan(""), std::nan("")};
  double m = 0.0;
  for (double x : xs) m += x;
  m /= double(xs.size());
  if (xs.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / double(xs.size() - 1)) / std::sqrt(double(xs.size()))};
}

inline double tail_mean(const std::vector<double>& xs, int window) {
  if (xs.empty()) return std::nan("");
  const auto n = std::min<std::size_t>(std::size_t(window), xs.size());
  double acc = 0.0;
  for (std::size_t i = xs.size() - n; i < xs.size(); ++i) acc += xs[i];
  return acc / double(n);
}

inline SoftmaxPolicy initial_policy(const ExactPgSettings& e, const Environment& env, std::uint64_t seed) {
  SoftmaxPolicy p = SoftmaxPolicy::uniform(env.features.n_features, env.mdp.n_actions);
  if (e.init == InitKind::random) {
    for (Eigen::Index i = 0; i < p.theta.rows(); ++i)
      for (Eigen::Index k = 0; k < p.theta.cols(); ++k)
        p.theta(i, k) = e.init_scale * standard_normal({seed, std::uint64_t(i), std::uint64_t(k), 9});
  } else if (e.init == InitKind::biased) {
    if (e.init_action >= env.mdp.n_actions) throw std::invalid_argument("init_action out of range for this environment");
    p.theta.col(e.init_action).setConstant(e.init_scale);
  }
  return p;
}

namespace harness_detail {

inline json distributions_doc_csv(const Environment& env, const Matrix& pi, const std::vector<long>* visits,
                                  const Vector* marginal, std::string& csv_out) {
  const Vector dbar = exact_discounted(env.mdp, pi).probs;
  Vector d1 = Vector::Constant(env.mdp.n_states, std::nan(""));
  std::string d1_error;
  try {
    d1 = exact_stationary(env.mdp, pi, true).probs;
  } catch (const std::exception& e) {
    d1_error = e.what();
  }
  std::ostringstream os;
  os << "state,exact_discounted,exact_stationary";
  if (visits) os << ",empirical_visits";
  if (marginal) os << ",decoder_marginal";
  os << '\n';
  long total = 0;
  if (visits)
    for (long c : *visits) total += c;
  for (int s = 0; s < env.mdp.n_states; ++s) {
    os << s << ',' << fmt_double(dbar(s)) << ',' << fmt_double(d1(s));
    if (visits) os << ',' << fmt_double(double((*visits)[std::size_t(s)]) / double(std::max(total, 1L)));
    if (marginal) os << ',' << fmt_double((*marginal)(s));
    os << '\n';
  }
  csv_out = os.str();
  json j{{"entropy_discounted", entropy(dbar)}};
  if (d1_error.empty()) j["entropy_stationary"] = entropy(d1);
  else j["stationary_error"] = d1_error;
  return j;
}

inline SeedOutcome run_actor_critic_seed(const ExperimentConfig& cfg, TrainConfig t, std::uint64_t seed,
                                         const fs::path& dir) {
  SeedOutcome o;
  o.seed = seed;
  t.seed = seed;
  if (!cfg.emits("checkpoints")) t.checkpoint_every = 0;
  const TrainResult res = train(t);
  if (cfg.emits("metrics")) write_atomic(dir / "metrics.csv", metrics_csv(res.episodes));
  std::vector<double> rets, hu, hd;
  for (const auto& m : res.episodes) {
    rets.push_back(m.ret);
    hu.push_back(m.entropy_uniform);
    hd.push_back(m.entropy_discounted);
  }
  o.curve = rets;
  if (res.aborted) {
    o.ok = false;
    o.error = res.error;
  }
  const Environment env = build(t.env);
  if (cfg.emits("heatmap")) emit_heatmap(res.visit_counts, env.layout, dir);
  if (cfg.emits("distributions") && !res.episodes.empty()) {
    const Vector marginal = decoder_marginal(res.phi, 1000, seed);
    std::string csv;
    (void)distributions_doc_csv(env, policy_table(env.mdp, res.theta, env.features), &res.visit_counts, &marginal, csv);
    write_atomic(dir / "distributions.csv", csv);
  }
  if (cfg.emits("checkpoints")) {
    auto ckpt = [&](int episode, const SoftmaxPolicy& th, const CriticParams& psi, const VaeParams& phi) {
      return json{{"episode", episode}, {"theta", matrix_json(th.theta)}, {"psi", matrix_json(psi.q)}, {"phi", phi}};
    };
    for (const auto& c : res.checkpoints)
      write_atomic(dir / "checkpoints" / ("episode_" + std::to_string(c.episode) + ".json"),
                   ckpt(c.episode, c.theta, c.psi, c.phi).dump());
    write_atomic(dir / "checkpoint.json",
                 ckpt(res.episodes.empty() ? -1 : res.episodes.back().episode, res.theta, res.psi, res.phi).dump());
  }
  o.finals = {{"final_return", tail_mean(rets, cfg.final_window)},
              {"final_entropy_uniform", tail_mean(hu, cfg.final_window)},
              {"final_entropy_discounted", tail_mean(hd, cfg.final_window)},
              {"distinct_states", double(res.distinct_states())},
              {"episodes", double(res.episodes.size())},
              {"total_steps", res.episodes.empty() ? 0.0 : double(res.episodes.back().steps)}};
  return o;
}

inline SeedOutcome run_exact_pg_seed(const ExperimentConfig& cfg, const ExactPgSettings& e, std::uint64_t seed,
                                     const fs::path& dir) {
  SeedOutcome o;
  o.seed = seed;
  const Environment env = build(cfg.env);
  const ExactPgTrace tr =
      run_exact_pg(env.mdp, initial_policy(e, env, seed), env.features, e.lambda, e.lr, e.iters, e.kind);
  if (cfg.emits("metrics")) write_atomic(dir / "metrics.csv", trace_csv(tr.records));
  for (const auto& r : tr.records) o.curve.push_back(r.J);
  if (tr.aborted) {
    o.ok = false;
    o.error = tr.error;
  }
  if (cfg.emits("distributions")) {
    std::string csv;
    (void)distributions_doc_csv(env, policy_table(env.mdp, tr.final_policy, env.features), nullptr, nullptr, csv);
    write_atomic(dir / "distributions.csv", csv);
  }
  if (cfg.emits("checkpoints"))
    write_atomic(dir / "checkpoint.json", json{{"theta", matrix_json(tr.final_policy.theta)}}.dump());
  if (cfg.emits("heatmap")) {
    // exact occupancy in place of visit counts, scaled to integers for the grid
    const Vector d = exact_discounted(env.mdp, tr.final_policy, env.features).probs;
    std::vector<long> counts(std::size_t(env.mdp.n_states));
    for (int s = 0; s < env.mdp.n_states; ++s) counts[std::size_t(s)] = std::lround(1e6 * d(s));
    emit_heatmap(counts, env.layout, dir);
  }
  if (!tr.records.empty()) {
    const auto& last = tr.records.back();
    o.finals = {{"J", last.J}, {"H", last.H}, {"J_tilde", last.J_tilde}, {"grad_inf_norm", last.grad_inf_norm},
                {"iterations", double(tr.records.size())}};
  }
  return o;
}

}  // namespace harness_detail

/// Number of workers: explicit value, else SELAB_WORKERS, else hardware threads.
inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SELAB_WORKERS")) {
    try {
      const int w = std::stoi(env);
      if (w > 0) return w;
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs jobs 0..n-1 on up to `workers` threads. Jobs share nothing.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& job) {
  std::atomic<std::size_t> next{0};
  auto loop = [&]() {
    for (std::size_t i = next++; i < n; i = next++) job(i);
  };
  const auto k = std::min<std::size_t>(std::size_t(std::max(workers, 1)), n);
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < k; ++w) pool.emplace_back(loop);
  loop();
  for (auto& t : pool) t.join();
}

inline SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir) {
  try {
    if (const auto* t = std::get_if<TrainConfig>(&cfg.method))
      return harness_detail::run_actor_critic_seed(cfg, *t, seed, dir);
    return harness_detail::run_exact_pg_seed(cfg, std::get<ExactPgSettings>(cfg.method), seed, dir);
  } catch (const std::exception& e) {
    SeedOutcome o;
    o.seed = seed;
    o.ok = false;
    o.error = e.what();
    return o;
  }
}

inline json summary_json(const ExperimentConfig& cfg, const RunSummary& s) {
  json seeds = json::array();
  for (const auto& o : s.seeds) {
    json e{{"seed", o.seed}, {"status", o.ok ? "ok" : "error"}, {"final", o.finals},
           {"metrics_path", "seed_" + std::to_string(o.seed) + "/metrics.csv"}};
    if (!o.ok) e["error"] = o.error;
    seeds.push_back(e);
  }
  json agg = json::object();
  for (const auto& [k, v] : s.aggregate) {
    std::size_t n = 0;
    for (const auto& o : s.seeds)
      if (o.finals.count(k)) ++n;
    agg[k] = {{"mean", v.first}, {"stderr", v.second}, {"n", n}};
  }
  return json{{"config_hash", s.config_hash},
              {"config", to_json_doc(cfg)},
              {"method", cfg.is_exact_pg() ? "exact_pg" : "actor_critic"},
              {"seeds", seeds},
              {"aggregate", agg},
              {"wall_clock_seconds", s.wall_clock_seconds}};
}

/// Aggregates over seeds that produced a value for the metric.
inline std::map<std::string, std::pair<double, double>> aggregate(const std::vector<SeedOutcome>& seeds) {
  std::map<std::string, std::vector<double>> cols;
  for (const auto& o : seeds)
    for (const auto& [k, v] : o.finals) cols[k].push_back(v);
  std::map<std::string, std::pair<double, double>> out;
  for (const auto& [k, xs] : cols) out[k] = mean_stderr(xs);
  return out;
}

/// Executes every seed, writes per-seed artifacts under output_dir/seed_<k>/
/// and output_dir/summary.json.
inline RunSummary run_experiment(const ExperimentConfig& cfg, int workers = 0) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path root(cfg.output_dir);
  fs::create_directories(root);
  RunSummary s;
  s.config_hash = config_hash(cfg);
  s.seeds.resize(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), resolve_workers(workers), [&](std::size_t i) {
    s.seeds[i] = run_seed(cfg, cfg.seeds[i], root / ("seed_" + std::to_string(cfg.seeds[i])));
  });
  s.aggregate = aggregate(s.seeds);
  s.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_atomic(root / "summary.json", summary_json(cfg, s).dump(2) + "\n");
  return s;
}

inline const std::vector<double> kDefaultSweepLambdas{0.001, 0.01, 0.1, 1.0};

inline std::string lambda_label(double l) {
  std::ostringstream os;
  os << l;
  return os.str();
}

struct SweepResult {
  std::vector<double> lambdas;  // always includes 0
  std::map<double, RunSummary> runs;
  std::size_t rows = 0;
  bool all_ok = true;
};

/// One run per (lambda, seed). λ = 0 is always included. Writes
/// output_dir/sweep.csv in long format (lambda, seed, episode, return) and
/// output_dir/lambda_<l>/ for each run.
inline SweepResult run_sweep(const ExperimentConfig& base, std::vector<double> lambdas, int workers = 0) {
  if (std::find(lambdas.begin(), lambdas.end(), 0.0) == lambdas.end()) lambdas.insert(lambdas.begin(), 0.0);
  std::sort(lambdas.begin(), lambdas.end());
  lambdas.erase(std::unique(lambdas.begin(), lambdas.end()), lambdas.end());
  for (double l : lambdas)
    if (!(l >= 0.0)) throw ConfigError({"lambdas: values must be >= 0"});

  std::vector<ExperimentConfig> cfgs;
  for (double l : lambdas) {
    ExperimentConfig c = base;
    c.output_dir = (fs::path(base.output_dir) / ("lambda_" + lambda_label(l))).string();
    if (auto* t = std::get_if<TrainConfig>(&c.method)) {
      t->lambda = l;
      if (l == 0.0) t->mode = RegMode::none;
      else if (t->mode == RegMode::none) t->mode = RegMode::reward_bonus;
    } else {
      std::get<ExactPgSettings>(c.method).lambda = l;
    }
    cfgs.push_back(std::move(c));
  }

  // flatten (lambda, seed) pairs onto one pool
  struct Job {
    std::size_t cfg;
    std::size_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < cfgs.size(); ++c)
    for (std::size_t k = 0; k < base.seeds.size(); ++k) jobs.push_back({c, k});
  std::vector<std::vector<SeedOutcome>> outcomes(cfgs.size(), std::vector<SeedOutcome>(base.seeds.size()));
  const auto t0 = std::chrono::steady_clock::now();
  parallel_for(jobs.size(), resolve_workers(workers), [&](std::size_t i) {
    const auto& j = jobs[i];
    const auto seed = base.seeds[j.seed];
    outcomes[j.cfg][j.seed] = run_seed(cfgs[j.cfg], seed, fs::path(cfgs[j.cfg].output_dir) / ("seed_" + std::to_string(seed)));
  });
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  SweepResult res;
  res.lambdas = lambdas;
  std::ostringstream csv;
  csv << "lambda,seed,episode,return\n";
  for (std::size_t c = 0; c < cfgs.size(); ++c) {
    RunSummary s;
    s.config_hash = config_hash(cfgs[c]);
    s.seeds = outcomes[c];
    s.aggregate = aggregate(s.seeds);
    s.wall_clock_seconds = wall;
    write_atomic(fs::path(cfgs[c].output_dir) / "summary.json", summary_json(cfgs[c], s).dump(2) + "\n");
    for (const auto& o : s.seeds) {
      res.all_ok = res.all_ok && o.ok;
      for (std::size_t e = 0; e < o.curve.size(); ++e) {
        csv << lambda_label(lambdas[c]) << ',' << o.seed << ',' << e << ',' << fmt_double(o.curve[e]) << '\n';
        ++res.rows;
      }
    }
    res.runs[lambdas[c]] = std::move(s);
  }
  write_atomic(fs::path(base.output_dir) / "sweep.csv", csv.str());
  return res;
}

/// Parses "0..9", "3" or "0,2,5".
inline std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  auto num = [&](const std::string& x) {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(x, &pos);
    if (pos != x.size() || x.empty() || x[0] == '-') throw std::invalid_argument("bad seed '" + x + "'");
    return std::uint64_t(v);
  };
  try {
    if (const auto dots = s.find(".."); dots != std::string::npos) {
      const auto lo = num(s.substr(0, dots)), hi = num(s.substr(dots + 2));
      if (hi < lo) throw std::invalid_argument("empty seed range");
      for (auto k = lo; k <= hi; ++k) out.push_back(k);
    } else {
      std::stringstream ss(s);
      std::string part;
      while (std::getline(ss, part, ',')) out.push_back(num(part));
    }
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument("--seeds: " + std::string(e.what()) + " (expected A..B or a comma list)");
  } catch (const std::out_of_range&) {
    throw std::invalid_argument("--seeds: value out of range");
  }
  if (out.empty()) throw std::invalid_argument("--seeds: no seeds given");
  return out;
}

}  // namespace selab

#endif  // SELAB_HARNESS_HPP
