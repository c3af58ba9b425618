#pragma once

// Numerical kernels shared by every other module: regression losses,
// extraction weights, composite-policy selection rules, and statistics.
// Everything here is pure and reentrant.

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rpexlab {

/// Raised when a statistic has no defined value for the given sample
/// (for instance kurtosis of a constant sample).
class UndefinedStatistic : public std::domain_error {
 public:
  explicit UndefinedStatistic(const std::string& what) : std::domain_error(what) {}
};

/// Densities entering the inverse-probability weight are floored here
/// before division.
inline constexpr double kActionProbFloor = 1e-8;

struct ExpectileConfig {
  double tau = 0.7;
  void validate() const;
};

struct HuberConfig {
  double delta = 1.0;
  void validate() const;
};

struct ClipBounds {
  double min_w = -10000.0;
  double max_w = 100.0;
  void validate() const;
};

struct SelectionConfig {
  /// Softmax temperature. The inverse temperature 3 corresponds to 1/3.
  double temperature = 1.0 / 3.0;
  /// Coefficient of the additive inverse-probability term.
  double ipw_coeff = 0.1;
  ClipBounds clip;
  double weight_floor = 1e-12;
  void validate() const;
};

struct SelectionWeights {
  std::vector<double> unnormalized;
  std::vector<double> probs;
  /// True when every repaired weight hit the floor and the plain softmax
  /// rule was used instead.
  bool fell_back = false;
};

enum class ExtractionMode { awr, align };

struct ExtractionConfig {
  ExtractionMode mode = ExtractionMode::awr;
  double awr_inv_temp = 3.0;
  double align_eta = 3.0;
  double awr_weight_cap = 100.0;
  void validate() const;
};

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std;

  static NormalizationStats identity(std::size_t dim);
  std::size_t dim() const { return mean.size(); }
  std::vector<double> normalize(std::span<const double> x) const;
  std::vector<double> denormalize(std::span<const double> z) const;
};

struct LossAndGrad {
  double loss;
  double grad;
};

/// Asymmetric squared loss |tau - 1(u<0)| u^2 and its derivative.
LossAndGrad expectile_loss(double u, const ExpectileConfig& cfg);

/// x^2/(2 delta) inside the knee, |x| - delta/2 outside.
LossAndGrad huber_loss(double x, const HuberConfig& cfg);

/// Population-moment excess kurtosis. Throws UndefinedStatistic when the
/// sample has fewer than four values or zero spread.
double excess_kurtosis(std::span<const double> samples);

/// Empirical q-quantile with linear interpolation between order statistics.
double quantile(std::span<const double> values, double q);

double awr_weight(double adv, const ExtractionConfig& cfg);
double align_weight(double adv, const ExtractionConfig& cfg);
/// Dispatches on cfg.mode.
double extraction_weight(double adv, const ExtractionConfig& cfg);

/// Softmax of q / temperature.
SelectionWeights pex_probs(std::span<const double> q_values, const SelectionConfig& cfg);

/// clip(adv / action_prob, min_w, max_w). action_prob must be positive.
double ipw_weight(double adv, double action_prob, const ClipBounds& clip);

/// exp(q/temperature) + ipw_coeff * ipw_weight, floored and renormalized.
SelectionWeights rpex_probs(std::span<const double> q_values, std::span<const double> advs,
                            std::span<const double> action_probs, const SelectionConfig& cfg);

/// Entropy-regularized selection objective with the inverse-probability
/// regularizer. P must lie on the simplex within 1e-9.
double rpex_objective(std::span<const double> P, std::span<const double> q_values,
                      std::span<const double> advs, std::span<const double> action_probs,
                      double alpha, double kappa1);

/// Exact maximizer of rpex_objective:
/// P ∝ exp(q/alpha + (kappa1/alpha) adv/p).
SelectionWeights softmax_of_sum_probs(std::span<const double> q_values,
                                      std::span<const double> advs,
                                      std::span<const double> action_probs, double alpha,
                                      double kappa1);

/// Joint mean and population std over states and next states; std entries
/// below 1e-8 are floored to 1.
NormalizationStats compute_norm_stats(std::span<const std::vector<double>> states,
                                      std::span<const std::vector<double>> next_states);

}  // namespace rpexlab
