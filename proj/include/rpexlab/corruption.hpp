#pragma once

// Random and adversarial data corruption for offline datasets and online
// transitions, plus a conformance checker for corrupted datasets.
//
// Formulas (lambda ~ Uniform[-eps, eps] per dimension):
//   observation  s  <- s  + lambda * std(s)
//   action       a  <- a  + lambda * std(a)
//   reward       r  <- Uniform[-30 eps, 30 eps]
//   dynamics     s' <- s' + lambda * std(s')
//   mixed        offline: dynamics; online: reward and dynamics together
// Adversarial mode replaces the online dynamics noise with projected
// gradient descent against a frozen critic.

#include <optional>
#include <string>
#include <vector>

#include "rpexlab/core_math.hpp"
#include "rpexlab/envs.hpp"
#include "rpexlab/neural.hpp"

namespace rpexlab {

enum class CorruptElement { none, observation, action, reward, dynamics, mixed };
enum class CorruptMode { random, adversarial };

std::string to_string(CorruptElement e);
std::string to_string(CorruptMode m);
CorruptElement parse_corrupt_element(const std::string& s);
CorruptMode parse_corrupt_mode(const std::string& s);

struct PgdConfig {
  int steps = 2;
  double step_size = 0.1;
};

inline constexpr double kRewardAttackRange = 30.0;

struct CorruptionSpec {
  CorruptElement element = CorruptElement::none;
  CorruptMode mode = CorruptMode::random;
  double offline_rate = 0.0;  // c1
  double online_rate = 0.0;   // c2
  double offline_scale = 1.0;
  double online_scale = 1.0;
  /// Per-dimension scales; empty until fill_std is called.
  std::vector<double> std_state;
  std::vector<double> std_next_state;
  std::vector<double> std_action;
  PgdConfig pgd;

  void validate() const;
  /// Population std of s, s' and a over the dataset (zero entries become 1).
  /// State scales are all ones when the learner normalizes states.
  void fill_std(const TransitionDataset& ds, bool states_normalized);
  bool has_std() const { return !std_state.empty(); }
};

/// floor(c1 * n + 0.5).
std::size_t offline_corruption_count(double rate, std::size_t n);

struct CorruptedDataset {
  TransitionDataset data;
  /// True for corrupted records. Diagnostics only; never given to learners.
  std::vector<bool> mask;
  /// Corrupted indices in the order their noise was drawn.
  std::vector<std::size_t> indices;
};

/// Corrupts offline_corruption_count(c1, N) distinct records chosen
/// uniformly without replacement; every other record is left bit-identical.
CorruptedDataset corrupt_dataset(const TransitionDataset& ds, const CorruptionSpec& spec, Rng& rng);

/// Corrupts exactly the listed records, drawing noise in list order.
CorruptedDataset corrupt_dataset_at(const TransitionDataset& ds, const std::vector<std::size_t>& indices,
                                    const CorruptionSpec& spec, Rng& rng);

/// Frozen critic ensemble, deterministic policy and normalizer that the
/// adversarial attack descends against.
struct AttackOracle {
  CriticEnsemble critic;
  DeterministicPolicy policy;
  NormalizationStats norm;

  /// Member-mean Q(x, pi(x)) at raw next states x (one per column) and its
  /// gradient with respect to x.
  Vec q_and_grad(const Mat& raw_states, Mat* grad) const;
};

struct AttackResult {
  Transition transition;
  bool applied = false;
  double q_start = 0.0;  // Q at s' + z0 * std
  double q_final = 0.0;  // Q at the returned s'
};

class AttackSkipped : public std::runtime_error {
 public:
  explicit AttackSkipped(const std::string& what) : std::runtime_error(what) {}
};

/// PGD on z in [-eps, eps]^d: z0 uniform, then `steps` updates
/// z <- clip(z - step_size * dQ/dz), returning s' + z std(s').
/// Throws AttackSkipped on a non-finite gradient.
AttackResult adversarial_dynamics(const Transition& t, const AttackOracle& oracle, const CorruptionSpec& spec,
                                  Rng& rng);

struct CorruptionOutcome {
  Transition transition;
  bool corrupted = false;
  /// Set when an adversarial attack was attempted but abandoned.
  bool attack_skipped = false;
};

/// With probability c2 corrupts the online transition; the oracle is
/// required exactly when the spec is adversarial.
CorruptionOutcome corrupt_transition(const Transition& t, const CorruptionSpec& spec, Rng& rng,
                                     const AttackOracle* oracle);

struct CorruptionReport {
  std::size_t n = 0;
  std::size_t changed = 0;
  std::size_t expected = 0;
  double fraction = 0.0;
  /// Records whose noise exceeds the element's bound.
  std::size_t bound_violations = 0;
  /// Records where a field other than the attacked element(s) differs.
  std::size_t foreign_changes = 0;
  /// Injected noise in units of the scale (lambda for additive attacks, the
  /// corrupted reward itself for reward attacks), pooled over dimensions.
  double noise_mean = 0.0;
  double noise_var = 0.0;
  double theory_mean = 0.0;
  double theory_var = 0.0;

  bool ok() const { return changed == expected && bound_violations == 0 && foreign_changes == 0; }
  std::string summary() const;
};

CorruptionReport validate_corruption(const TransitionDataset& before, const TransitionDataset& after,
                                     const CorruptionSpec& spec);

/// "index,corrupted" CSV of a provenance mask.
std::string mask_csv(const std::vector<bool>& mask);

}  // namespace rpexlab
