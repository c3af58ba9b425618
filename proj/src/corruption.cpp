#include "rpexlab/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rpexlab {

namespace {

constexpr double kStdFloor = 1e-8;

std::vector<double> population_std(const std::vector<const std::vector<double>*>& rows) {
  const std::size_t d = rows.front()->size();
  std::vector<long double> mean(d, 0.0L);
  for (const auto* r : rows) {
    for (std::size_t i = 0; i < d; ++i) mean[i] += (*r)[i];
  }
  for (auto& m : mean) m /= static_cast<long double>(rows.size());
  std::vector<long double> var(d, 0.0L);
  for (const auto* r : rows) {
    for (std::size_t i = 0; i < d; ++i) {
      const long double c = (*r)[i] - mean[i];
      var[i] += c * c;
    }
  }
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double s = static_cast<double>(std::sqrt(var[i] / static_cast<long double>(rows.size())));
    out[i] = s < kStdFloor ? 1.0 : s;
  }
  return out;
}

void add_scaled_noise(std::vector<double>& x, const std::vector<double>& scale, double eps, Rng& rng) {
  if (scale.size() != x.size()) throw std::invalid_argument("corruption std has wrong dimension");
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += uniform(rng, -eps, eps) * scale[i];
}

// Applies one random attack to the element(s) of t.
void corrupt_fields(Transition& t, CorruptElement element, double eps, const CorruptionSpec& spec, Rng& rng) {
  switch (element) {
    case CorruptElement::none:
      return;
    case CorruptElement::observation:
      add_scaled_noise(t.s, spec.std_state, eps, rng);
      return;
    case CorruptElement::action:
      add_scaled_noise(t.a, spec.std_action, eps, rng);
      return;
    case CorruptElement::reward:
      t.r = uniform(rng, -kRewardAttackRange * eps, kRewardAttackRange * eps);
      return;
    case CorruptElement::dynamics:
      add_scaled_noise(t.s2, spec.std_next_state, eps, rng);
      return;
    case CorruptElement::mixed:
      t.r = uniform(rng, -kRewardAttackRange * eps, kRewardAttackRange * eps);
      add_scaled_noise(t.s2, spec.std_next_state, eps, rng);
      return;
  }
}

}  // namespace

std::string to_string(CorruptElement e) {
  switch (e) {
    case CorruptElement::none: return "none";
    case CorruptElement::observation: return "observation";
    case CorruptElement::action: return "action";
    case CorruptElement::reward: return "reward";
    case CorruptElement::dynamics: return "dynamics";
    case CorruptElement::mixed: return "mixed";
  }
  return "?";
}

std::string to_string(CorruptMode m) { return m == CorruptMode::random ? "random" : "adversarial"; }

CorruptElement parse_corrupt_element(const std::string& s) {
  for (auto e : {CorruptElement::none, CorruptElement::observation, CorruptElement::action, CorruptElement::reward,
                 CorruptElement::dynamics, CorruptElement::mixed}) {
    if (to_string(e) == s) return e;
  }
  throw std::invalid_argument("unknown corruption element '" + s + "'");
}

CorruptMode parse_corrupt_mode(const std::string& s) {
  if (s == "random") return CorruptMode::random;
  if (s == "adversarial") return CorruptMode::adversarial;
  throw std::invalid_argument("unknown corruption mode '" + s + "'");
}

void CorruptionSpec::validate() const {
  if (!(offline_rate >= 0.0 && offline_rate <= 1.0) || !(online_rate >= 0.0 && online_rate <= 1.0)) {
    throw std::invalid_argument("corruption rates must lie in [0,1]");
  }
  if (!(offline_scale >= 0.0) || !(online_scale >= 0.0)) throw std::invalid_argument("corruption scale must be >= 0");
  if (mode == CorruptMode::adversarial && element != CorruptElement::dynamics) {
    throw std::invalid_argument("adversarial corruption is defined for the dynamics element only");
  }
  if (pgd.steps < 0 || !(pgd.step_size >= 0.0)) throw std::invalid_argument("invalid PGD configuration");
  for (const auto* v : {&std_state, &std_next_state, &std_action}) {
    for (double x : *v) {
      if (!(x > 0.0) || !std::isfinite(x)) throw std::invalid_argument("corruption std entries must be positive");
    }
  }
}

void CorruptionSpec::fill_std(const TransitionDataset& ds, bool states_normalized) {
  if (ds.records.empty()) throw std::invalid_argument("cannot compute std of an empty dataset");
  std::vector<const std::vector<double>*> s, s2, a;
  for (const auto& t : ds.records) {
    s.push_back(&t.s);
    s2.push_back(&t.s2);
    a.push_back(&t.a);
  }
  std_action = population_std(a);
  if (states_normalized) {
    std_state.assign(static_cast<std::size_t>(ds.state_dim), 1.0);
    std_next_state.assign(static_cast<std::size_t>(ds.state_dim), 1.0);
  } else {
    std_state = population_std(s);
    std_next_state = population_std(s2);
  }
}

std::size_t offline_corruption_count(double rate, std::size_t n) {
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 0.5));
}

CorruptedDataset corrupt_dataset(const TransitionDataset& ds, const CorruptionSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t n = ds.size();
  const std::size_t k = offline_corruption_count(spec.offline_rate, n);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  // Partial Fisher-Yates: the first k slots are a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, n - i));
    std::swap(perm[i], perm[j]);
  }
  perm.resize(k);
  return corrupt_dataset_at(ds, perm, spec, rng);
}

CorruptedDataset corrupt_dataset_at(const TransitionDataset& ds, const std::vector<std::size_t>& indices,
                                    const CorruptionSpec& spec, Rng& rng) {
  spec.validate();
  const CorruptElement element =
      spec.element == CorruptElement::mixed ? CorruptElement::dynamics : spec.element;
  if (element != CorruptElement::none && element != CorruptElement::reward && !spec.has_std()) {
    throw std::invalid_argument("corruption spec has no std vectors; call fill_std first");
  }
  CorruptedDataset out{ds, std::vector<bool>(ds.size(), false), indices};
  for (std::size_t idx : indices) {
    if (idx >= ds.size()) throw std::out_of_range("corruption index out of range");
    if (out.mask[idx]) throw std::invalid_argument("corruption indices must be distinct");
    out.mask[idx] = true;
    corrupt_fields(out.data.records[idx], element, spec.offline_scale, spec, rng);
  }
  return out;
}

Vec AttackOracle::q_and_grad(const Mat& raw_states, Mat* grad) const {
  const Eigen::Index d = raw_states.rows();
  if (static_cast<std::size_t>(d) != norm.dim()) throw std::invalid_argument("oracle state dimension mismatch");
  Vec mean(d), inv_std(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    mean(i) = norm.mean[static_cast<std::size_t>(i)];
    inv_std(i) = 1.0 / norm.std[static_cast<std::size_t>(i)];
  }
  Mat x = raw_states;
  x.colwise() -= mean;
  x = inv_std.asDiagonal() * x;
  const Mat actions = policy.act(x);
  Mat d_states, d_actions;
  const Vec q = critic.mean_q_with_input_grad(x, actions, grad ? &d_states : nullptr, grad ? &d_actions : nullptr);
  if (grad != nullptr) {
    const Mat total = d_states + policy.input_gradient(x, d_actions);
    *grad = inv_std.asDiagonal() * total;
  }
  return q;
}

AttackResult adversarial_dynamics(const Transition& t, const AttackOracle& oracle, const CorruptionSpec& spec,
                                  Rng& rng) {
  const double eps = spec.online_scale;
  const std::size_t d = t.s2.size();
  if (spec.std_next_state.size() != d) throw std::invalid_argument("corruption std has wrong dimension");
  Vec base(static_cast<Eigen::Index>(d)), scale(static_cast<Eigen::Index>(d)), z(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i) {
    base(static_cast<Eigen::Index>(i)) = t.s2[i];
    scale(static_cast<Eigen::Index>(i)) = spec.std_next_state[i];
    z(static_cast<Eigen::Index>(i)) = uniform(rng, -eps, eps);
  }
  AttackResult res{t, true, 0.0, 0.0};
  Mat grad;
  Vec x = base + z.cwiseProduct(scale);
  res.q_start = oracle.q_and_grad(x, &grad)(0);
  for (int step = 0; step < spec.pgd.steps; ++step) {
    const Vec gz = grad.col(0).cwiseProduct(scale);
    if (!gz.allFinite()) throw AttackSkipped("non-finite PGD gradient");
    z = (z - spec.pgd.step_size * gz).cwiseMax(-eps).cwiseMin(eps);
    x = base + z.cwiseProduct(scale);
    const bool last = step + 1 == spec.pgd.steps;
    res.q_final = oracle.q_and_grad(x, last ? nullptr : &grad)(0);
  }
  if (spec.pgd.steps == 0) res.q_final = res.q_start;
  if (!std::isfinite(res.q_final)) throw AttackSkipped("non-finite oracle value");
  for (std::size_t i = 0; i < d; ++i) res.transition.s2[i] = x(static_cast<Eigen::Index>(i));
  return res;
}

CorruptionOutcome corrupt_transition(const Transition& t, const CorruptionSpec& spec, Rng& rng,
                                     const AttackOracle* oracle) {
  const bool adversarial = spec.mode == CorruptMode::adversarial;
  if (adversarial && oracle == nullptr) throw std::invalid_argument("adversarial corruption requires an oracle");
  if (!adversarial && oracle != nullptr) throw std::invalid_argument("random corruption takes no oracle");
  CorruptionOutcome out{t, false, false};
  if (spec.element == CorruptElement::none || spec.online_rate == 0.0) return out;
  if (uniform01(rng) >= spec.online_rate) return out;
  if (adversarial) {
    try {
      out.transition = adversarial_dynamics(t, *oracle, spec, rng).transition;
      out.corrupted = true;
    } catch (const AttackSkipped&) {
      out.attack_skipped = true;
    }
    return out;
  }
  corrupt_fields(out.transition, spec.element, spec.online_scale, spec, rng);
  out.corrupted = true;
  return out;
}

std::string CorruptionReport::summary() const {
  std::ostringstream os;
  os << "changed " << changed << "/" << n << " (expected " << expected << ", fraction " << fraction
     << "), bound violations " << bound_violations << ", foreign changes " << foreign_changes << ", noise mean "
     << noise_mean << " (theory " << theory_mean << "), noise var " << noise_var << " (theory " << theory_var
     << ")";
  return os.str();
}

CorruptionReport validate_corruption(const TransitionDataset& before, const TransitionDataset& after,
                                     const CorruptionSpec& spec) {
  if (before.size() != after.size()) throw std::invalid_argument("validate_corruption: size mismatch");
  const CorruptElement element =
      spec.element == CorruptElement::mixed ? CorruptElement::dynamics : spec.element;
  const double eps = spec.offline_scale;
  CorruptionReport rep;
  rep.n = before.size();
  rep.expected = element == CorruptElement::none ? 0 : offline_corruption_count(spec.offline_rate, rep.n);
  rep.theory_var = element == CorruptElement::reward ? std::pow(kRewardAttackRange * eps, 2) / 3.0 : eps * eps / 3.0;

  long double sum = 0.0L, sum_sq = 0.0L;
  std::size_t count = 0;
  auto record_noise = [&](double v) {
    sum += v;
    sum_sq += static_cast<long double>(v) * v;
    ++count;
  };
  // Bound check on lambda = (after - before) / std with a rounding allowance.
  auto check_additive = [&](const std::vector<double>& x, const std::vector<double>& y,
                            const std::vector<double>& scale) {
    bool violated = scale.size() != x.size();
    for (std::size_t i = 0; i < x.size() && !violated; ++i) {
      const double lambda = (y[i] - x[i]) / scale[i];
      const double tol = 1e-12 * (1.0 + std::abs(x[i]) / scale[i]);
      if (!(std::abs(lambda) <= eps + tol)) violated = true;
      record_noise(lambda);
    }
    return violated;
  };

  for (std::size_t k = 0; k < rep.n; ++k) {
    const Transition& b = before.records[k];
    const Transition& a = after.records[k];
    if (b == a) continue;
    ++rep.changed;
    const bool s_changed = b.s != a.s;
    const bool a_changed = b.a != a.a;
    const bool r_changed = b.r != a.r;
    const bool s2_changed = b.s2 != a.s2;
    const bool done_changed = b.done != a.done;
    bool foreign = done_changed;
    bool violated = false;
    switch (element) {
      case CorruptElement::none:
      case CorruptElement::mixed:
        foreign = true;
        break;
      case CorruptElement::observation:
        foreign = foreign || a_changed || r_changed || s2_changed;
        violated = check_additive(b.s, a.s, spec.std_state);
        break;
      case CorruptElement::action:
        foreign = foreign || s_changed || r_changed || s2_changed;
        violated = check_additive(b.a, a.a, spec.std_action);
        break;
      case CorruptElement::reward:
        foreign = foreign || s_changed || a_changed || s2_changed;
        violated = !(std::abs(a.r) <= kRewardAttackRange * eps);
        record_noise(a.r);
        break;
      case CorruptElement::dynamics:
        foreign = foreign || s_changed || a_changed || r_changed;
        violated = check_additive(b.s2, a.s2, spec.std_next_state);
        break;
    }
    if (foreign) ++rep.foreign_changes;
    if (violated) ++rep.bound_violations;
  }
  rep.fraction = rep.n == 0 ? 0.0 : static_cast<double>(rep.changed) / static_cast<double>(rep.n);
  if (count > 0) {
    const long double m = sum / count;
    rep.noise_mean = static_cast<double>(m);
    rep.noise_var = static_cast<double>(sum_sq / count - m * m);
  }
  return rep;
}

std::string mask_csv(const std::vector<bool>& mask) {
  std::string out = "index,corrupted\n";
  for (std::size_t i = 0; i < mask.size(); ++i) {
    out += std::to_string(i);
    out += mask[i] ? ",1\n" : ",0\n";
  }
  return out;
}

}  // namespace rpexlab
