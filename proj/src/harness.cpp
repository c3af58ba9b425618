#include "rpexlab/harness.hpp"

#include <boost/uuid/detail/sha1.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace rpexlab {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw std::invalid_argument("config " + key + ": '" + v + "' is not a number");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw std::invalid_argument("config " + key + ": '" + v + "' is not an integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config " + key + ": '" + v + "' is not a boolean");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(xs[i]);
  }
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define RPEX_DOUBLE(KEY, EXPR)                                                              \
  Field {                                                                                   \
    KEY, [](const ExperimentConfig& c) { return format_double(c.EXPR); },                   \
        [](ExperimentConfig& c, const std::string& v) { c.EXPR = to_double(KEY, v); }       \
  }
#define RPEX_INT(KEY, EXPR)                                                                              \
  Field {                                                                                                \
    KEY, [](const ExperimentConfig& c) { return std::to_string(c.EXPR); },                               \
        [](ExperimentConfig& c, const std::string& v) { c.EXPR = static_cast<decltype(c.EXPR)>(to_int(KEY, v)); } \
  }
#define RPEX_BOOL(KEY, EXPR)                                                          \
  Field {                                                                             \
    KEY, [](const ExperimentConfig& c) { return bool_text(c.EXPR); },                 \
        [](ExperimentConfig& c, const std::string& v) { c.EXPR = to_bool(KEY, v); }   \
  }
#define RPEX_STRING(KEY, EXPR)                                                  \
  Field {                                                                       \
    KEY, [](const ExperimentConfig& c) { return c.EXPR; },                      \
        [](ExperimentConfig& c, const std::string& v) { c.EXPR = v; }           \
  }
#define RPEX_ENUM(KEY, EXPR, PARSE)                                             \
  Field {                                                                       \
    KEY, [](const ExperimentConfig& c) { return to_string(c.EXPR); },           \
        [](ExperimentConfig& c, const std::string& v) { c.EXPR = PARSE(v); }    \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      RPEX_STRING("env.id", env_id),
      RPEX_INT("env.dataset_size", dataset_size),
      RPEX_DOUBLE("env.behavior_p_opt", behavior_p_opt),
      RPEX_STRING("env.dataset_path", dataset_path),

      RPEX_ENUM("corruption.element", corruption.element, parse_corrupt_element),
      RPEX_ENUM("corruption.mode", corruption.mode, parse_corrupt_mode),
      RPEX_DOUBLE("corruption.offline_rate", corruption.offline_rate),
      RPEX_DOUBLE("corruption.online_rate", corruption.online_rate),
      RPEX_DOUBLE("corruption.offline_scale", corruption.offline_scale),
      RPEX_DOUBLE("corruption.online_scale", corruption.online_scale),
      RPEX_INT("corruption.pgd_steps", corruption.pgd.steps),
      RPEX_DOUBLE("corruption.pgd_step_size", corruption.pgd.step_size),

      RPEX_DOUBLE("agent.gamma", agent.gamma),
      RPEX_DOUBLE("agent.expectile", agent.expectile.tau),
      RPEX_ENUM("agent.critic_loss", agent.critic_loss, parse_critic_loss),
      RPEX_DOUBLE("agent.huber_delta", agent.huber.delta),
      RPEX_INT("agent.ensemble_size", agent.ensemble_size),
      RPEX_DOUBLE("agent.quantile_level", agent.quantile_level),
      RPEX_ENUM("agent.extraction.mode", agent.extraction.mode, parse_extraction_mode),
      RPEX_DOUBLE("agent.extraction.awr_inv_temp", agent.extraction.awr_inv_temp),
      RPEX_DOUBLE("agent.extraction.align_eta", agent.extraction.align_eta),
      RPEX_DOUBLE("agent.extraction.awr_weight_cap", agent.extraction.awr_weight_cap),
      RPEX_ENUM("agent.selection.rule", agent.selection_rule, parse_selection_rule),
      Field{"agent.selection.inv_temperature",
            [](const ExperimentConfig& c) { return format_double(1.0 / c.agent.selection.temperature); },
            [](ExperimentConfig& c, const std::string& v) {
              const double inv = to_double("agent.selection.inv_temperature", v);
              if (!(inv > 0.0)) throw std::invalid_argument("agent.selection.inv_temperature must be positive");
              c.agent.selection.temperature = 1.0 / inv;
            }},
      RPEX_DOUBLE("agent.selection.kappa", agent.selection.ipw_coeff),
      RPEX_DOUBLE("agent.selection.clip_min", agent.selection.clip.min_w),
      RPEX_DOUBLE("agent.selection.clip_max", agent.selection.clip.max_w),
      RPEX_DOUBLE("agent.selection.weight_floor", agent.selection.weight_floor),
      RPEX_INT("agent.utd", agent.utd),
      RPEX_INT("agent.initial_collection", agent.initial_collection),
      RPEX_INT("agent.offline_steps", agent.offline_steps),
      RPEX_INT("agent.online_steps", agent.online_steps),
      RPEX_INT("agent.eval_interval", agent.eval_interval),
      RPEX_INT("agent.eval_episodes", agent.eval_episodes),
      RPEX_BOOL("agent.normalize_states", agent.normalize_states),
      RPEX_ENUM("agent.policy_kind", agent.policy_kind, parse_policy_kind),
      RPEX_DOUBLE("agent.deterministic_noise", agent.deterministic_noise),
      Field{"agent.hidden", [](const ExperimentConfig& c) { return join(c.agent.hidden); },
            [](ExperimentConfig& c, const std::string& v) {
              std::vector<int> h;
              for (const auto& item : split_list(v)) h.push_back(static_cast<int>(to_int("agent.hidden", item)));
              c.agent.hidden = h;
            }},
      RPEX_DOUBLE("agent.lr", agent.optim.lr),
      RPEX_DOUBLE("agent.polyak", agent.optim.polyak),
      RPEX_INT("agent.batch_size", agent.mix.batch_size),
      RPEX_DOUBLE("agent.offline_ratio", agent.mix.offline_ratio),
      RPEX_BOOL("agent.retain_offline", agent.mix.retain_offline),
      RPEX_INT("agent.online_capacity", agent.online_capacity),

      RPEX_INT("oracle.offline_steps", oracle_offline_steps),
      RPEX_INT("oracle.ensemble_size", oracle_ensemble_size),

      Field{"run.seeds", [](const ExperimentConfig& c) { return join(c.seeds); },
            [](ExperimentConfig& c, const std::string& v) {
              std::vector<std::uint64_t> seeds;
              for (const auto& item : split_list(v)) seeds.push_back(std::stoull(item));
              c.seeds = seeds;
            }},
      RPEX_STRING("run.out_dir", out_dir),
      RPEX_STRING("run.offline_checkpoint", offline_checkpoint),
      RPEX_BOOL("run.diagnostics", diagnostics),
      RPEX_INT("run.kurtosis_samples", kurtosis_samples),
  };
  return table;
}

#undef RPEX_DOUBLE
#undef RPEX_INT
#undef RPEX_BOOL
#undef RPEX_STRING
#undef RPEX_ENUM

const Field& find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (key == f.key) return f;
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

std::string opt_text(const std::optional<double>& v) { return v ? format_double(*v) : "undefined"; }

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  agent.validate();
  corruption.validate();
  if (dataset_size == 0 && dataset_path.empty()) throw std::invalid_argument("dataset size must be positive");
  if (!(behavior_p_opt >= 0.0 && behavior_p_opt <= 1.0)) throw std::invalid_argument("behavior p_opt must lie in [0,1]");
  if (oracle_offline_steps < 0 || oracle_ensemble_size < 1) throw std::invalid_argument("invalid oracle budget");
  if (kurtosis_samples < 4) throw std::invalid_argument("kurtosis needs at least 4 samples");
  std::vector<std::uint64_t> sorted = seeds;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw std::invalid_argument("seeds must be distinct");
  make_env(env_id);
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, trim(value));
}

std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) { return find_field(key).get(cfg); }

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("override '" + o + "' is not key=value");
    set_config_value(cfg, trim(o.substr(0, eq)), o.substr(eq + 1));
  }
}

std::string echo_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

std::string content_hash(const std::string& content) {
  boost::uuids::detail::sha1 sha;
  const std::string header = "blob " + std::to_string(content.size());
  sha.process_bytes(header.data(), header.size());
  const char nul = '\0';
  sha.process_bytes(&nul, 1);
  sha.process_bytes(content.data(), content.size());
  boost::uuids::detail::sha1::digest_type digest;
  sha.get_digest(digest);
  char hex[41];
  for (int i = 0; i < 5; ++i) std::snprintf(hex + 8 * i, 9, "%08x", digest[i]);
  return std::string(hex, 40);
}

// ---------------------------------------------------------------------------
// Diagnostics

KurtosisReport policy_kurtosis(const std::function<Vec(const Vec&, Rng&)>& sample_action,
                               const std::vector<Vec>& states, int n_samples, Rng& rng) {
  if (n_samples < 4) throw std::invalid_argument("policy_kurtosis needs at least 4 samples");
  if (states.empty()) throw std::invalid_argument("policy_kurtosis needs states");
  std::vector<std::vector<double>> coords;
  for (int i = 0; i < n_samples; ++i) {
    const Vec& s = states[static_cast<std::size_t>(uniform_index(rng, states.size()))];
    const Vec a = sample_action(s, rng);
    if (coords.empty()) coords.resize(static_cast<std::size_t>(a.size()));
    for (Eigen::Index d = 0; d < a.size(); ++d) coords[static_cast<std::size_t>(d)].push_back(a(d));
  }
  KurtosisReport rep;
  double sum = 0.0;
  int defined = 0;
  for (const auto& c : coords) {
    try {
      const double k = excess_kurtosis(c);
      rep.per_dim.emplace_back(k);
      sum += k;
      ++defined;
    } catch (const UndefinedStatistic&) {
      rep.per_dim.emplace_back(std::nullopt);
    }
  }
  if (defined > 0) rep.mean = sum / defined;
  return rep;
}

KurtosisReport policy_kurtosis(const GaussianPolicy& pi, const std::vector<Vec>& states, int n_samples, Rng& rng) {
  return policy_kurtosis([&pi](const Vec& s, Rng& r) { return pi.sample(s, r).action; }, states, n_samples, rng);
}

KurtosisReport policy_kurtosis(const DeterministicPolicy& pi, const std::vector<Vec>& states, int n_samples, Rng& rng) {
  return policy_kurtosis([&pi](const Vec& s, Rng&) { return pi.act(s); }, states, n_samples, rng);
}

std::optional<double> qtarget_kurtosis(const Batch& batch, const ValueNet& value, double gamma) {
  if (batch.size() < 4) throw std::invalid_argument("qtarget_kurtosis needs at least 4 transitions");
  const Vec v2 = value.values(batch.s2);
  std::vector<double> y(static_cast<std::size_t>(batch.size()));
  for (Eigen::Index j = 0; j < batch.size(); ++j) y[static_cast<std::size_t>(j)] = batch.r(j) + gamma * (1.0 - batch.done(j)) * v2(j);
  try {
    return excess_kurtosis(y);
  } catch (const UndefinedStatistic&) {
    return std::nullopt;
  }
}

Trajectory greedy_trajectory(const OnlineAgent& agent, const Environment& env, int samples_per_state,
                             std::uint64_t seed, std::optional<State> start) {
  Rng rng(seed);
  Episode ep(env, start ? *start : env.reset(rng));
  Trajectory traj;
  const bool maze = dynamic_cast<const GridMaze*>(&env) != nullptr;
  if (maze && samples_per_state < 1) throw std::invalid_argument("samples_per_state must be positive");
  while (!ep.over()) {
    TrajectoryStep st;
    st.state = ep.state();
    Action a;
    if (maze) {
      std::vector<int> counts(GridMaze::kNumDirections, 0);
      for (int i = 0; i < samples_per_state; ++i) {
        ++counts[static_cast<std::size_t>(GridMaze::snap(agent.sample_selection(ep.state(), rng).action))];
      }
      int best = 0;
      for (int k = 0; k < GridMaze::kNumDirections; ++k) {
        st.direction_probs.push_back(static_cast<double>(counts[static_cast<std::size_t>(k)]) / samples_per_state);
        if (counts[static_cast<std::size_t>(k)] > counts[static_cast<std::size_t>(best)]) best = k;
      }
      a = GridMaze::direction(best);
    } else {
      a = agent.select_action_eval(ep.state());
    }
    const Transition t = ep.step(a, rng);
    st.action = t.a;
    st.reward = t.r;
    traj.steps.push_back(std::move(st));
  }
  traj.reached_goal = ep.terminal();
  return traj;
}

std::string trajectory_csv(const Trajectory& traj) {
  std::string out = "t";
  const std::size_t ds = traj.steps.empty() ? 0 : traj.steps.front().state.size();
  const std::size_t da = traj.steps.empty() ? 0 : traj.steps.front().action.size();
  const std::size_t dp = traj.steps.empty() ? 0 : traj.steps.front().direction_probs.size();
  for (std::size_t i = 0; i < ds; ++i) out += ",s" + std::to_string(i);
  for (std::size_t i = 0; i < da; ++i) out += ",a" + std::to_string(i);
  out += ",reward";
  for (std::size_t i = 0; i < dp; ++i) out += ",p" + std::to_string(i);
  out += "\n";
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const auto& st = traj.steps[t];
    out += std::to_string(t);
    for (double v : st.state) out += "," + format_double(v);
    for (double v : st.action) out += "," + format_double(v);
    out += "," + format_double(st.reward);
    for (double v : st.direction_probs) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

void dump_trajectory(const OnlineAgent& agent, const Environment& env, const std::string& path,
                     int samples_per_state, std::uint64_t seed) {
  write_file(path, trajectory_csv(greedy_trajectory(agent, env, samples_per_state, seed)));
}

// ---------------------------------------------------------------------------
// Runs

bool EvalReport::ok() const {
  return std::all_of(seeds.begin(), seeds.end(), [](const SeedResult& r) { return r.error.empty(); });
}

std::string metrics_csv(const std::vector<EvalPoint>& evals) {
  std::string out = "step,eval_index,mean_return,min_return,max_return,mean_length,goal_rate,gradient_passes\n";
  for (std::size_t i = 0; i < evals.size(); ++i) {
    const auto& e = evals[i];
    const auto [mn, mx] = std::minmax_element(e.returns.begin(), e.returns.end());
    double len = 0.0, goals = 0.0;
    for (std::size_t k = 0; k < e.returns.size(); ++k) {
      len += e.lengths[k];
      goals += e.reached_goal[k] ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(e.returns.size());
    out += std::to_string(e.step) + "," + std::to_string(i) + "," + format_double(e.mean_return) + "," +
           format_double(*mn) + "," + format_double(*mx) + "," + format_double(len / n) + "," +
           format_double(goals / n) + "," + std::to_string(e.gradient_passes) + "\n";
  }
  return out;
}

std::string episodes_csv(const std::vector<EvalPoint>& evals) {
  std::string out = "step,episode,return,length,reached_goal\n";
  for (const auto& e : evals) {
    for (std::size_t k = 0; k < e.returns.size(); ++k) {
      out += std::to_string(e.step) + "," + std::to_string(k) + "," + format_double(e.returns[k]) + "," +
             std::to_string(e.lengths[k]) + "," + (e.reached_goal[k] ? "1" : "0") + "\n";
    }
  }
  return out;
}

PreparedData prepare_data(const ExperimentConfig& cfg, const Environment& env, std::uint64_t seed) {
  PreparedData out;
  if (!cfg.dataset_path.empty()) {
    out.clean = read_dataset(cfg.dataset_path);
    if (out.clean.state_dim != env.state_dim() || out.clean.action_dim != env.action_dim()) {
      throw std::invalid_argument("dataset dimensions do not match the environment");
    }
  } else {
    out.clean = collect_dataset(env, BehaviorSpec{cfg.behavior_p_opt}, cfg.dataset_size, derive_seed(seed, 100));
  }
  out.spec = cfg.corruption;
  out.spec.fill_std(out.clean, cfg.agent.normalize_states);
  Rng rng(derive_seed(seed, 101));
  out.corrupted = corrupt_dataset(out.clean, out.spec, rng);
  return out;
}

namespace {

std::vector<Vec> state_sample(const TransitionDataset& ds, const StateNormalizer& norm) {
  std::vector<Vec> out;
  out.reserve(ds.size());
  for (const auto& t : ds.records) out.push_back(norm.apply(t.s));
  return out;
}

constexpr int kSelectionBins = 10;
constexpr std::size_t kSelectionStates = 256;

std::string diag_header(int action_dim) {
  std::string h = "phase,step";
  for (int d = 0; d < action_dim; ++d) h += ",policy_kurtosis_" + std::to_string(d);
  h += ",policy_kurtosis_mean,qtarget_kurtosis";
  for (int b = 0; b < kSelectionBins; ++b) h += ",p_online_bin" + std::to_string(b);
  return h + "\n";
}

/// Histogram of the online candidate's selection probability over a fixed
/// sample of raw dataset states, as fractions per bin of width 0.1.
std::vector<double> selection_histogram(const OnlineAgent& agent, const std::vector<State>& raw_states, Rng& rng) {
  std::vector<double> hist(kSelectionBins, 0.0);
  for (const auto& s : raw_states) {
    const double p = agent.sample_selection(s, rng).weights.probs.back();
    const int bin = std::min(kSelectionBins - 1, static_cast<int>(p * kSelectionBins));
    hist[static_cast<std::size_t>(bin)] += 1.0 / static_cast<double>(raw_states.size());
  }
  return hist;
}

std::string diag_row(const std::string& phase, std::uint64_t step, const KurtosisReport& pk,
                     const std::optional<double>& qk, const std::vector<double>& hist) {
  std::string row = phase + "," + std::to_string(step);
  for (const auto& d : pk.per_dim) row += "," + opt_text(d);
  row += "," + opt_text(pk.mean) + "," + opt_text(qk);
  for (double h : hist) row += "," + format_double(h);
  return row + "\n";
}

std::string counters_text(const TrainCounters& c) {
  std::string out;
  auto line = [&out](const char* k, std::uint64_t v) { out += std::string(k) + " = " + std::to_string(v) + "\n"; };
  line("gradient_passes", c.gradient_passes);
  line("value_steps", c.value_steps);
  line("critic_steps", c.critic_steps);
  line("policy_steps", c.policy_steps);
  line("skipped_steps", c.skipped_steps);
  line("env_steps", c.env_steps);
  line("corrupted_transitions", c.corrupted_transitions);
  line("skipped_attacks", c.skipped_attacks);
  line("explore_selections", c.explore_selections);
  line("explore_online_chosen", c.explore_online_chosen);
  line("selection_fallbacks", c.selection_fallbacks);
  return out;
}

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir, const LogFn& log) {
  SeedResult res;
  res.seed = seed;
  fs::create_directories(dir);
  const auto env = make_env(cfg.env_id);
  const PreparedData data = prepare_data(cfg, *env, seed);
  write_file(dir / "corruption_mask.csv", mask_csv(data.corrupted.mask));
  write_dataset(data.corrupted.data, (dir / "dataset_corrupted.txt").string());

  OfflineArtifacts art;
  if (!cfg.offline_checkpoint.empty()) {
    art = OfflineArtifacts::from_checkpoint(Checkpoint::load(cfg.offline_checkpoint), cfg.agent);
  } else {
    art = offline_train(data.corrupted.data, cfg.agent, env->action_bounds(), derive_seed(seed, 103), log);
  }
  res.offline_counters = art.counters;
  art.to_checkpoint().save((dir / "offline.ckpt").string());

  std::optional<AttackOracle> oracle;
  if (data.spec.mode == CorruptMode::adversarial) {
    AgentConfig oc = cfg.agent;
    oc.offline_steps = cfg.oracle_offline_steps;
    oc.ensemble_size = cfg.oracle_ensemble_size;
    oracle = train_attack_oracle(data.corrupted.data, oc, env->action_bounds(), derive_seed(seed, 102), log);
  }

  const StateNormalizer norm(art.norm);
  const std::vector<Vec> states = state_sample(data.corrupted.data, norm);
  std::vector<State> hist_states;
  for (std::size_t i = 0; i < kSelectionStates && i < data.corrupted.data.size(); ++i) {
    hist_states.push_back(data.corrupted.data.records[i * data.corrupted.data.size() / kSelectionStates].s);
  }
  std::string diag = diag_header(env->action_dim());
  Rng diag_rng(derive_seed(seed, 105));
  ReplayBuffer offline_buf = ReplayBuffer::from_dataset(data.corrupted.data);
  auto diag_batch = [&]() {
    Batch b = sample_uniform(offline_buf, cfg.kurtosis_samples, diag_rng);
    normalize_batch(b, norm);
    return b;
  };

  OnlineAgent agent(art, data.corrupted.data, derive_seed(seed, 104));
  const std::uint64_t beta_hash = agent.beta().param_hash();
  if (cfg.diagnostics) {
    const KurtosisReport pk = art.beta.kind == PolicyKind::gaussian
                                  ? policy_kurtosis(art.beta.gaussian, states, cfg.kurtosis_samples, diag_rng)
                                  : policy_kurtosis(art.beta.deterministic, states, cfg.kurtosis_samples, diag_rng);
    diag += diag_row("offline", 0, pk, qtarget_kurtosis(diag_batch(), art.value, cfg.agent.gamma),
                     selection_histogram(agent, hist_states, diag_rng));
  }
  const bool maze = dynamic_cast<const GridMaze*>(env.get()) != nullptr;
  if (cfg.diagnostics && maze) {
    dump_trajectory(agent, *env, (dir / "trajectory_offline.csv").string(), 1000, derive_seed(seed, 107));
  }
  Rng online_rng(derive_seed(seed, 106));
  auto on_eval = [&](const EvalPoint& pt) {
    if (!cfg.diagnostics) return;
    const KurtosisReport pk = policy_kurtosis(agent.theta(), states, cfg.kurtosis_samples, diag_rng);
    diag += diag_row("online", pt.step, pk, qtarget_kurtosis(diag_batch(), agent.value(), cfg.agent.gamma),
                     selection_histogram(agent, hist_states, diag_rng));
  };
  res.evals = agent.online_train(*env, data.spec, oracle ? &*oracle : nullptr, online_rng, on_eval, log);
  res.online_counters = agent.counters();
  if (cfg.agent.selection_rule != SelectionRule::direct && agent.beta().param_hash() != beta_hash) {
    throw std::logic_error("offline policy changed during online training");
  }
  agent.to_checkpoint().save((dir / "online.ckpt").string());
  write_file(dir / "metrics.csv", metrics_csv(res.evals));
  write_file(dir / "counters.txt", "[offline]\n" + counters_text(res.offline_counters) + "[online]\n" +
                                       counters_text(res.online_counters));
  write_file(dir / "episodes.csv", episodes_csv(res.evals));
  if (cfg.diagnostics) write_file(dir / "diagnostics.csv", diag);
  if (cfg.diagnostics && maze) {
    dump_trajectory(agent, *env, (dir / "trajectory_online.csv").string(), 1000, derive_seed(seed, 108));
  }
  if (res.evals.size() >= 3) res.final_return = final_summary(res.evals);
  return res;
}

}  // namespace

EvalReport run_experiment(const ExperimentConfig& cfg, const LogFn& log) {
  cfg.validate();
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  const std::string echo = echo_config(cfg);
  EvalReport report;
  std::string summary = "seed,final_return,evaluations\n";
  for (std::uint64_t seed : cfg.seeds) {
    const fs::path dir = out / ("seed_" + std::to_string(seed));
    SeedResult r;
    try {
      r = run_seed(cfg, seed, dir, log);
    } catch (const std::exception& e) {
      r.seed = seed;
      r.error = e.what();
      if (log) log("seed " + std::to_string(seed) + " failed: " + r.error);
    }
    summary += std::to_string(seed) + "," + opt_text(r.final_return) + "," + std::to_string(r.evals.size()) + "\n";
    report.seeds.push_back(std::move(r));
  }
  std::vector<double> finals;
  for (const auto& r : report.seeds) {
    if (r.final_return) finals.push_back(*r.final_return);
  }
  if (!finals.empty()) {
    double m = 0.0;
    for (double f : finals) m += f;
    m /= static_cast<double>(finals.size());
    double v = 0.0;
    for (double f : finals) v += (f - m) * (f - m);
    report.mean_final = m;
    report.std_final = finals.size() > 1 ? std::sqrt(v / static_cast<double>(finals.size() - 1)) : 0.0;
  }
  if (!cfg.seeds.empty()) write_file(out / "summary.csv", summary);

  std::string manifest = "# rpexlab experiment manifest\n";
  manifest += "config_hash = " + content_hash(echo) + "\n";
  manifest += "scale = offline_steps " + std::to_string(cfg.agent.offline_steps) + ", online_steps " +
              std::to_string(cfg.agent.online_steps) + ", hidden " + get_config_value(cfg, "agent.hidden") +
              " (reference scale: offline 2000000, online 1000000, hidden 256,256)\n";
  manifest += "[config]\n" + echo;
  manifest += "[results]\n";
  manifest += "final_return_mean = " + opt_text(report.mean_final) + "\n";
  manifest += "final_return_std = " + opt_text(report.std_final) + "\n";
  for (const auto& r : report.seeds) {
    if (!r.error.empty()) manifest += "error.seed_" + std::to_string(r.seed) + " = " + r.error + "\n";
  }
  write_file(out / "manifest.txt", manifest);
  return report;
}

}  // namespace rpexlab
