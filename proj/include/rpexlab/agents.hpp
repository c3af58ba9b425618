#pragma once

// IQL / RIQL training, policy extraction, composite-policy action selection,
// and the offline and online training loops.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rpexlab/checkpoint.hpp"
#include "rpexlab/core_math.hpp"
#include "rpexlab/corruption.hpp"
#include "rpexlab/envs.hpp"
#include "rpexlab/neural.hpp"
#include "rpexlab/replay.hpp"

namespace rpexlab {

enum class CriticLoss { mse, huber };
enum class SelectionRule { direct, pex, rpex };
enum class PolicyKind { gaussian, deterministic };

std::string to_string(CriticLoss v);
std::string to_string(SelectionRule v);
std::string to_string(PolicyKind v);
std::string to_string(ExtractionMode v);
CriticLoss parse_critic_loss(const std::string& s);
SelectionRule parse_selection_rule(const std::string& s);
PolicyKind parse_policy_kind(const std::string& s);
ExtractionMode parse_extraction_mode(const std::string& s);

using LogFn = std::function<void(const std::string&)>;

struct AgentConfig {
  double gamma = 0.99;
  ExpectileConfig expectile;
  CriticLoss critic_loss = CriticLoss::mse;
  HuberConfig huber;
  int ensemble_size = 1;
  double quantile_level = 0.25;
  ExtractionConfig extraction;
  SelectionConfig selection;
  SelectionRule selection_rule = SelectionRule::rpex;
  int utd = 1;
  int initial_collection = 5000;
  int offline_steps = 50000;
  int online_steps = 20000;
  /// 0 means online_steps / 20.
  int eval_interval = 0;
  int eval_episodes = 10;
  bool normalize_states = true;
  PolicyKind policy_kind = PolicyKind::gaussian;
  /// Exploration noise added to a deterministic policy's action.
  double deterministic_noise = 0.1;
  std::vector<int> hidden{256, 256};
  OptimConfig optim;
  MixConfig mix;
  /// 0 means initial_collection + online_steps (no eviction).
  std::size_t online_capacity = 0;

  void validate() const;
  int effective_eval_interval() const;
  std::size_t effective_online_capacity() const;

  /// Single critic, squared loss.
  static AgentConfig iql();
  /// Five critics aggregated at the 0.25 quantile, Huber loss with delta 1.
  static AgentConfig riql();
};

struct TrainCounters {
  std::uint64_t gradient_passes = 0;
  std::uint64_t value_steps = 0;
  std::uint64_t critic_steps = 0;
  std::uint64_t policy_steps = 0;
  std::uint64_t skipped_steps = 0;
  std::uint64_t env_steps = 0;
  std::uint64_t corrupted_transitions = 0;
  std::uint64_t skipped_attacks = 0;
  std::uint64_t explore_online_chosen = 0;
  std::uint64_t explore_selections = 0;
  std::uint64_t selection_fallbacks = 0;
};

/// Affine state normalizer in Eigen form.
struct StateNormalizer {
  Vec mean;
  Vec inv_std;
  StateNormalizer() = default;
  explicit StateNormalizer(const NormalizationStats& stats);
  Mat apply(const Mat& states) const;
  Vec apply(const State& state) const;
};

/// In-place normalization of a batch's s and s'.
void normalize_batch(Batch& batch, const StateNormalizer& norm);

/// The offline policy pi_beta, either Gaussian or deterministic.
struct BehaviorPolicy {
  PolicyKind kind = PolicyKind::gaussian;
  GaussianPolicy gaussian;
  DeterministicPolicy deterministic;

  Vec mode(const Vec& state) const;
  std::uint64_t param_hash() const;
};

// ---------------------------------------------------------------------------
// Single-step updates. Batches must already be normalized.

/// One Adam step on mean_b L_tau(Qagg_target(s,a) - V(s)). Returns the loss.
double update_value(ValueNet& value, const CriticEnsemble& critic, const Batch& batch, const AgentConfig& cfg);

/// One Adam step per member on the squared or Huber TD error against
/// y = r + gamma (1 - done) V(s'), then a Polyak step on the targets.
/// Returns the member-mean loss.
double update_critic(CriticEnsemble& critic, const ValueNet& value, const Batch& batch, const AgentConfig& cfg);

/// Per-sample extraction weights w(Qagg_target(s,a) - V(s)).
Vec extraction_weights(const CriticEnsemble& critic, const ValueNet& value, const Batch& batch,
                       const AgentConfig& cfg);

/// Weighted likelihood (Gaussian) or weighted squared error (deterministic).
double update_policy(GaussianPolicy& policy, const CriticEnsemble& critic, const ValueNet& value,
                     const Batch& batch, const AgentConfig& cfg);
double update_policy(DeterministicPolicy& policy, const CriticEnsemble& critic, const ValueNet& value,
                     const Batch& batch, const AgentConfig& cfg);

/// Gradient of the critic loss with respect to each member's parameters,
/// without stepping. Used to compare loss functions.
std::vector<MlpGrads> critic_gradients(const CriticEnsemble& critic, const ValueNet& value, const Batch& batch,
                                       const AgentConfig& cfg);

// ---------------------------------------------------------------------------

struct OfflineArtifacts {
  AgentConfig cfg;
  NormalizationStats norm;
  ActionBounds bounds;
  BehaviorPolicy beta;
  CriticEnsemble critic;
  ValueNet value;
  TrainCounters counters;

  Checkpoint to_checkpoint() const;
  /// cfg is not stored in checkpoints; the caller supplies it.
  static OfflineArtifacts from_checkpoint(const Checkpoint& ckpt, const AgentConfig& cfg);
};

/// Normalizes states (when enabled), then runs cfg.offline_steps gradient
/// passes on uniform batches: value, critic, policy.
OfflineArtifacts offline_train(const TransitionDataset& ds, const AgentConfig& cfg, const ActionBounds& bounds,
                               std::uint64_t seed, const LogFn& log = {});

/// Trains a deterministic-policy critic ensemble for the adversarial attack.
AttackOracle train_attack_oracle(const TransitionDataset& ds, const AgentConfig& cfg, const ActionBounds& bounds,
                                 std::uint64_t seed, const LogFn& log = {});

struct SelectionTrace {
  std::vector<Action> candidates;  // index 0: pi_beta, 1: pi_theta
  std::vector<double> q;
  std::vector<double> adv;
  std::vector<double> density;
  SelectionWeights weights;
  int chosen = 0;
  Action action;
};

struct EvalPoint {
  std::uint64_t step = 0;
  std::vector<double> returns;
  std::vector<int> lengths;
  std::vector<bool> reached_goal;
  double mean_return = 0.0;
  std::uint64_t gradient_passes = 0;
};

/// Mean of the last three evaluation means; throws with fewer than three.
double final_summary(const std::vector<EvalPoint>& evals);

/// Composite policy [pi_beta, pi_theta] with shared critic and value, plus
/// the buffers and the online loop around it.
class OnlineAgent {
 public:
  OnlineAgent(const OfflineArtifacts& artifacts, const TransitionDataset& offline_data, std::uint64_t seed);

  const AgentConfig& config() const { return cfg_; }
  const TrainCounters& counters() const { return counters_; }
  const BehaviorPolicy& beta() const { return beta_; }
  const GaussianPolicy& theta() const { return theta_; }
  const CriticEnsemble& critic() const { return critic_; }
  const ValueNet& value() const { return value_; }
  const StateNormalizer& normalizer() const { return norm_; }
  const NormalizationStats& norm_stats() const { return norm_stats_; }
  ReplayBuffer& offline_buffer() { return offline_; }
  ReplayBuffer& online_buffer() { return online_; }

  /// Selection trace for explicit candidates at a raw state.
  SelectionTrace score_candidates(const State& state, const std::vector<Action>& candidates,
                                  const std::vector<double>& densities) const;
  /// Density used for a candidate of policy `index` (0 beta, 1 theta).
  double candidate_density(const Vec& norm_state, int index, const Vec& action) const;

  /// Draws candidates and a selection without touching any counters.
  SelectionTrace sample_selection(const State& state, Rng& rng) const;
  SelectionTrace select_action_explore(const State& state, Rng& rng);
  Action select_action_eval(const State& state) const;

  /// One mixed batch and one value/critic/policy update.
  void gradient_pass(Rng& rng);

  EvalPoint evaluate(const Environment& env, int episodes, std::uint64_t seed, std::uint64_t step) const;

  /// Initial collection followed by cfg.online_steps interaction steps with
  /// cfg.utd gradient passes each. Every stored transition goes through
  /// corrupt_transition once. on_eval is called after each evaluation.
  std::vector<EvalPoint> online_train(const Environment& env, const CorruptionSpec& spec,
                                      const AttackOracle* oracle, Rng& rng,
                                      const std::function<void(const EvalPoint&)>& on_eval = {},
                                      const LogFn& log = {});

  Checkpoint to_checkpoint() const;

 private:
  void update_step(const Batch& batch);

  AgentConfig cfg_;
  NormalizationStats norm_stats_;
  StateNormalizer norm_;
  ActionBounds bounds_;
  BehaviorPolicy beta_;
  GaussianPolicy theta_;
  CriticEnsemble critic_;
  ValueNet value_;
  ReplayBuffer offline_;
  ReplayBuffer online_;
  TrainCounters counters_;
  LogFn log_;
};

/// Loads the composite policy from an online checkpoint (with pi_theta) or
/// the offline policy from an offline one, and returns its greedy action.
class CheckpointPolicy {
 public:
  CheckpointPolicy(const Checkpoint& ckpt, const AgentConfig& cfg);
  Action act(const State& state) const;
  bool has_online_policy() const { return has_theta_; }

 private:
  AgentConfig cfg_;
  OfflineArtifacts base_;
  StateNormalizer norm_;
  GaussianPolicy theta_;
  bool has_theta_ = false;
};

/// Greedy evaluation of an arbitrary action function on a clean environment.
EvalPoint evaluate_policy(const Environment& env, const std::function<Action(const State&)>& act, int episodes,
                          std::uint64_t seed, std::uint64_t step = 0);

}  // namespace rpexlab
