#include "rpexlab/core_math.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>
#include <numeric>

namespace rpexlab {

namespace {

void require_finite(std::span<const double> xs, const char* what) {
  for (double x : xs) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite input");
  }
}

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": length mismatch");
}

}  // namespace

void ExpectileConfig::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("expectile tau must lie in (0,1)");
}

void HuberConfig::validate() const {
  if (!(delta > 0.0)) throw std::invalid_argument("huber delta must be positive");
}

void ClipBounds::validate() const {
  if (!(min_w < 0.0 && max_w > 0.0)) {
    throw std::invalid_argument("clip bounds must satisfy min_w < 0 < max_w");
  }
}

void SelectionConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("selection temperature must be positive");
  if (!(ipw_coeff >= 0.0)) throw std::invalid_argument("ipw coefficient must be non-negative");
  if (!(weight_floor > 0.0)) throw std::invalid_argument("weight floor must be positive");
  clip.validate();
}

void ExtractionConfig::validate() const {
  if (!(awr_inv_temp > 0.0)) throw std::invalid_argument("awr inverse temperature must be positive");
  if (!(align_eta > 0.0)) throw std::invalid_argument("align eta must be positive");
  if (!(awr_weight_cap > 0.0)) throw std::invalid_argument("awr weight cap must be positive");
}

NormalizationStats NormalizationStats::identity(std::size_t dim) {
  return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

std::vector<double> NormalizationStats::normalize(std::span<const double> x) const {
  require_same_size(x.size(), mean.size(), "normalize");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean[i]) / std[i];
  return out;
}

std::vector<double> NormalizationStats::denormalize(std::span<const double> z) const {
  require_same_size(z.size(), mean.size(), "denormalize");
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] * std[i] + mean[i];
  return out;
}

LossAndGrad expectile_loss(double u, const ExpectileConfig& cfg) {
  cfg.validate();
  const double weight = std::abs(cfg.tau - (u < 0.0 ? 1.0 : 0.0));
  return {weight * u * u, 2.0 * weight * u};
}

LossAndGrad huber_loss(double x, const HuberConfig& cfg) {
  cfg.validate();
  const double ax = std::abs(x);
  if (ax <= cfg.delta) return {x * x / (2.0 * cfg.delta), x / cfg.delta};
  return {ax - 0.5 * cfg.delta, x > 0.0 ? 1.0 : -1.0};
}

double excess_kurtosis(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 4) throw UndefinedStatistic("kurtosis needs at least four samples");
  // Two passes keep the central moments accurate for large offsets.
  long double mean = 0.0L;
  for (double x : samples) mean += x;
  mean /= static_cast<long double>(n);
  long double m2 = 0.0L;
  long double m4 = 0.0L;
  for (double x : samples) {
    const long double d = x - mean;
    const long double d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= static_cast<long double>(n);
  m4 /= static_cast<long double>(n);
  // Relative spread test: a constant sample can still leave rounding dust in m2.
  const long double scale = std::max<long double>(std::abs(mean), 1.0L);
  if (!(m2 > 0.0L) || std::sqrt(m2) <= 1e-14L * scale) {
    throw UndefinedStatistic("kurtosis undefined for zero-variance sample");
  }
  return static_cast<double>(m4 / (m2 * m2) - 3.0L);
}

double quantile(std::span<const double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of empty sequence");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile level must lie in [0,1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double awr_weight(double adv, const ExtractionConfig& cfg) {
  return std::min(std::exp(cfg.awr_inv_temp * adv), cfg.awr_weight_cap);
}

double align_weight(double adv, const ExtractionConfig& cfg) {
  return std::exp(-cfg.align_eta * adv * adv);
}

double extraction_weight(double adv, const ExtractionConfig& cfg) {
  return cfg.mode == ExtractionMode::awr ? awr_weight(adv, cfg) : align_weight(adv, cfg);
}

SelectionWeights pex_probs(std::span<const double> q_values, const SelectionConfig& cfg) {
  if (q_values.empty()) throw std::invalid_argument("pex_probs: no candidates");
  require_finite(q_values, "pex_probs");
  if (!(cfg.temperature > 0.0)) throw std::invalid_argument("pex_probs: temperature must be positive");
  const double top = *std::max_element(q_values.begin(), q_values.end());
  SelectionWeights out;
  out.unnormalized.resize(q_values.size());
  out.probs.resize(q_values.size());
  double total = 0.0;
  for (std::size_t i = 0; i < q_values.size(); ++i) {
    out.unnormalized[i] = std::exp((q_values[i] - top) / cfg.temperature);
    total += out.unnormalized[i];
  }
  for (std::size_t i = 0; i < q_values.size(); ++i) out.probs[i] = out.unnormalized[i] / total;
  return out;
}

double ipw_weight(double adv, double action_prob, const ClipBounds& clip) {
  if (!(action_prob > 0.0)) throw std::invalid_argument("ipw_weight: action probability must be positive");
  return std::clamp(adv / action_prob, clip.min_w, clip.max_w);
}

SelectionWeights rpex_probs(std::span<const double> q_values, std::span<const double> advs,
                            std::span<const double> action_probs, const SelectionConfig& cfg) {
  require_same_size(q_values.size(), advs.size(), "rpex_probs");
  require_same_size(q_values.size(), action_probs.size(), "rpex_probs");
  require_finite(q_values, "rpex_probs");
  require_finite(advs, "rpex_probs");
  require_finite(action_probs, "rpex_probs");
  if (cfg.ipw_coeff == 0.0) return pex_probs(q_values, cfg);

  // The additive term breaks shift invariance, so the exponential is taken
  // unshifted in extended precision and saturated instead.
  constexpr long double kMaxLd = std::numeric_limits<long double>::max();
  const std::size_t k = q_values.size();
  std::vector<long double> weights(k);
  SelectionWeights out;
  out.unnormalized.resize(k);
  out.probs.resize(k);
  bool all_floored = true;
  for (std::size_t i = 0; i < k; ++i) {
    long double e = std::exp(static_cast<long double>(q_values[i]) / cfg.temperature);
    if (!std::isfinite(e)) e = kMaxLd;
    long double w = e + static_cast<long double>(cfg.ipw_coeff) *
                            ipw_weight(advs[i], action_probs[i], cfg.clip);
    if (w <= cfg.weight_floor) {
      w = cfg.weight_floor;
    } else {
      all_floored = false;
    }
    weights[i] = w;
    out.unnormalized[i] = static_cast<double>(std::min<long double>(w, DBL_MAX));
  }
  if (all_floored) {
    SelectionWeights fallback = pex_probs(q_values, cfg);
    fallback.fell_back = true;
    return fallback;
  }
  long double total = 0.0L;
  for (long double w : weights) total += w / static_cast<long double>(k);
  for (std::size_t i = 0; i < k; ++i) {
    out.probs[i] = static_cast<double>((weights[i] / static_cast<long double>(k)) / total);
  }
  return out;
}

double rpex_objective(std::span<const double> P, std::span<const double> q_values,
                      std::span<const double> advs, std::span<const double> action_probs,
                      double alpha, double kappa1) {
  require_same_size(P.size(), q_values.size(), "rpex_objective");
  require_same_size(P.size(), advs.size(), "rpex_objective");
  require_same_size(P.size(), action_probs.size(), "rpex_objective");
  double mass = 0.0;
  for (double p : P) {
    if (p < -1e-9 || !std::isfinite(p)) throw std::invalid_argument("rpex_objective: P off simplex");
    mass += p;
  }
  if (std::abs(mass - 1.0) > 1e-9) throw std::invalid_argument("rpex_objective: P off simplex");
  double total = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double entropy_term = P[i] > 0.0 ? alpha * P[i] * std::log(P[i]) : 0.0;
    total += P[i] * q_values[i] - entropy_term + kappa1 * (advs[i] / action_probs[i]) * P[i];
  }
  return total;
}

SelectionWeights softmax_of_sum_probs(std::span<const double> q_values,
                                      std::span<const double> advs,
                                      std::span<const double> action_probs, double alpha,
                                      double kappa1) {
  require_same_size(q_values.size(), advs.size(), "softmax_of_sum_probs");
  require_same_size(q_values.size(), action_probs.size(), "softmax_of_sum_probs");
  require_finite(q_values, "softmax_of_sum_probs");
  require_finite(advs, "softmax_of_sum_probs");
  require_finite(action_probs, "softmax_of_sum_probs");
  if (q_values.empty()) throw std::invalid_argument("softmax_of_sum_probs: no candidates");
  if (!(alpha > 0.0)) throw std::invalid_argument("softmax_of_sum_probs: alpha must be positive");
  std::vector<double> logits(q_values.size());
  for (std::size_t i = 0; i < q_values.size(); ++i) {
    if (!(action_probs[i] > 0.0)) {
      throw std::invalid_argument("softmax_of_sum_probs: action probability must be positive");
    }
    logits[i] = q_values[i] / alpha + (kappa1 / alpha) * advs[i] / action_probs[i];
  }
  require_finite(logits, "softmax_of_sum_probs");
  // Reuse the softmax kernel with unit temperature on the combined logits.
  SelectionConfig unit;
  unit.temperature = 1.0;
  return pex_probs(logits, unit);
}

NormalizationStats compute_norm_stats(std::span<const std::vector<double>> states,
                                      std::span<const std::vector<double>> next_states) {
  if (states.empty()) throw std::invalid_argument("compute_norm_stats: empty input");
  require_same_size(states.size(), next_states.size(), "compute_norm_stats");
  const std::size_t dim = states.front().size();
  const auto count = static_cast<long double>(2 * states.size());
  std::vector<long double> sum(dim, 0.0L);
  for (std::size_t i = 0; i < states.size(); ++i) {
    require_same_size(states[i].size(), dim, "compute_norm_stats");
    require_same_size(next_states[i].size(), dim, "compute_norm_stats");
    for (std::size_t d = 0; d < dim; ++d) sum[d] += states[i][d] + next_states[i][d];
  }
  NormalizationStats stats;
  stats.mean.resize(dim);
  stats.std.resize(dim);
  for (std::size_t d = 0; d < dim; ++d) stats.mean[d] = static_cast<double>(sum[d] / count);
  std::vector<long double> sq(dim, 0.0L);
  for (std::size_t i = 0; i < states.size(); ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      const long double a = states[i][d] - stats.mean[d];
      const long double b = next_states[i][d] - stats.mean[d];
      sq[d] += a * a + b * b;
    }
  }
  for (std::size_t d = 0; d < dim; ++d) {
    const double sd = static_cast<double>(std::sqrt(sq[d] / count));
    stats.std[d] = sd < 1e-8 ? 1.0 : sd;
  }
  return stats;
}

}  // namespace rpexlab
