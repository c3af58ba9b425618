#pragma once

// Experiment configuration, the per-seed pipeline, metrics and diagnostics
// files, and kurtosis / trajectory diagnostics.
//
// Config files are flat "key = value" lines with dotted keys; '#' starts a
// comment. Every key is listed by config_keys().

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rpexlab/agents.hpp"
#include "rpexlab/corruption.hpp"
#include "rpexlab/envs.hpp"

namespace rpexlab {

struct ExperimentConfig {
  std::string env_id = "pointmass";
  std::size_t dataset_size = 20000;
  double behavior_p_opt = 0.5;
  /// Optional dataset file used instead of collecting one.
  std::string dataset_path;

  CorruptionSpec corruption;
  AgentConfig agent;

  /// Budget of the critic/policy pair that drives adversarial attacks.
  int oracle_offline_steps = 5000;
  int oracle_ensemble_size = 2;

  std::vector<std::uint64_t> seeds{0};
  std::string out_dir = "runs/default";
  /// Optional offline checkpoint loaded instead of running offline training.
  std::string offline_checkpoint;
  /// Kurtosis diagnostics after offline training and at every evaluation.
  bool diagnostics = true;
  int kurtosis_samples = 5000;

  void validate() const;
};

/// Sets a dotted key from its text value; throws on unknown keys or bad values.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& cfg, const std::string& key);
std::vector<std::string> config_keys();

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});
/// Applies "key=value" overrides in order.
void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides);
/// Every key with its current value, one "key = value" line each, in key order.
std::string echo_config(const ExperimentConfig& cfg);

/// SHA-1 of "blob <size>\0<content>", as git computes object ids.
std::string content_hash(const std::string& content);

// ---------------------------------------------------------------------------
// Diagnostics

struct KurtosisReport {
  /// Per action dimension; nullopt where the statistic is undefined.
  std::vector<std::optional<double>> per_dim;
  /// Mean over the defined dimensions.
  std::optional<double> mean;
};

/// Draws n_samples actions, each at a state chosen uniformly from `states`,
/// and reports excess kurtosis of every action coordinate.
KurtosisReport policy_kurtosis(const std::function<Vec(const Vec&, Rng&)>& sample_action,
                               const std::vector<Vec>& states, int n_samples, Rng& rng);
KurtosisReport policy_kurtosis(const GaussianPolicy& pi, const std::vector<Vec>& states, int n_samples, Rng& rng);
/// Deterministic policies have no sampling noise, so every entry is undefined
/// unless the states themselves spread the actions.
KurtosisReport policy_kurtosis(const DeterministicPolicy& pi, const std::vector<Vec>& states, int n_samples, Rng& rng);

/// Excess kurtosis of the Bellman targets r + gamma (1 - done) V(s').
std::optional<double> qtarget_kurtosis(const Batch& batch, const ValueNet& value, double gamma);

/// Greedy rollout written as CSV.
///
/// GridMaze: at each state the exploration selection is sampled
/// `samples_per_state` times; the columns p0..p7 hold the resulting
/// probability of each compass direction and the most probable direction is
/// taken. Other environments follow the greedy evaluation action.
struct TrajectoryStep {
  State state;
  Action action;
  double reward = 0.0;
  std::vector<double> direction_probs;  // GridMaze only
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  bool reached_goal = false;
  std::size_t length() const { return steps.size(); }
};

Trajectory greedy_trajectory(const OnlineAgent& agent, const Environment& env, int samples_per_state,
                             std::uint64_t seed, std::optional<State> start = std::nullopt);
std::string trajectory_csv(const Trajectory& traj);
void dump_trajectory(const OnlineAgent& agent, const Environment& env, const std::string& path,
                     int samples_per_state = 1000, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Runs

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<EvalPoint> evals;
  std::optional<double> final_return;
  TrainCounters offline_counters;
  TrainCounters online_counters;
  std::string error;
};

struct EvalReport {
  std::vector<SeedResult> seeds;
  /// Mean and sample std across seeds of the per-seed final returns.
  std::optional<double> mean_final;
  std::optional<double> std_final;
  bool ok() const;
};

/// Per seed: dataset, offline corruption, offline training (or checkpoint
/// load), optional attack oracle, online training. Writes into cfg.out_dir:
///   manifest.txt                 config echo, content hash, errors, summary
///   summary.csv                  seed,final_return,evaluations
///   seed_<s>/metrics.csv         one row per evaluation
///   seed_<s>/episodes.csv        raw per-episode returns behind metrics.csv
///   seed_<s>/diagnostics.csv     kurtosis and selection-probability histogram
///   seed_<s>/counters.txt        offline and online training counters
///   seed_<s>/corruption_mask.csv offline provenance mask
///   seed_<s>/dataset_corrupted.txt, offline.ckpt, online.ckpt
///   seed_<s>/trajectory_{offline,online}.csv  GridMaze only, with diagnostics
EvalReport run_experiment(const ExperimentConfig& cfg, const LogFn& log = {});

/// Seed-independent pieces of the pipeline, exposed for tests and tools.
struct PreparedData {
  TransitionDataset clean;
  CorruptedDataset corrupted;
  CorruptionSpec spec;  // with std vectors filled
};
PreparedData prepare_data(const ExperimentConfig& cfg, const Environment& env, std::uint64_t seed);

std::string metrics_csv(const std::vector<EvalPoint>& evals);
std::string episodes_csv(const std::vector<EvalPoint>& evals);

}  // namespace rpexlab
