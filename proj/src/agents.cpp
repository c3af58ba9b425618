#include "rpexlab/agents.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace rpexlab {

namespace {

// Seed streams derived from an experiment seed.
constexpr std::uint64_t kStreamInit = 1;
constexpr std::uint64_t kStreamBatches = 2;
constexpr std::uint64_t kStreamTheta = 3;
constexpr std::uint64_t kStreamExplore = 4;
constexpr std::uint64_t kStreamEnv = 5;
constexpr std::uint64_t kStreamCorrupt = 6;
constexpr std::uint64_t kStreamOnlineBatches = 7;
constexpr std::uint64_t kStreamEval = 8;

Vec to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Action to_action(const Vec& v) { return Action(v.data(), v.data() + v.size()); }

void log_if(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

template <typename Fn>
void guarded(TrainCounters& counters, const LogFn& log, const char* what, Fn&& fn) {
  try {
    fn();
  } catch (const NonFiniteError& e) {
    ++counters.skipped_steps;
    log_if(log, std::string("skipped ") + what + " update: " + e.what());
  }
}

/// Read-only view of a composite policy for scoring and greedy selection.
struct CompositeView {
  const AgentConfig& cfg;
  const StateNormalizer& norm;
  const BehaviorPolicy& beta;
  const GaussianPolicy* theta;  // null when only pi_beta exists
  const CriticEnsemble& critic;
  const ValueNet& value;

  double density(const Vec& n, int index, const Vec& action) const {
    double log_p = 0.0;
    if (index == 0 && beta.kind == PolicyKind::gaussian) {
      log_p = beta.gaussian.log_density(n, action);
    } else {
      // A deterministic pi_beta borrows the online Gaussian's density.
      if (theta == nullptr) throw std::logic_error("density of a deterministic policy needs pi_theta");
      log_p = theta->log_density(n, action);
    }
    return std::max(std::exp(log_p), kActionProbFloor);
  }

  SelectionTrace score(const Vec& n, const std::vector<Action>& candidates,
                       const std::vector<double>& densities) const {
    const auto k = static_cast<Eigen::Index>(candidates.size());
    Mat states(n.size(), k), actions(static_cast<Eigen::Index>(candidates.front().size()), k);
    for (Eigen::Index i = 0; i < k; ++i) {
      states.col(i) = n;
      actions.col(i) = to_vec(candidates[static_cast<std::size_t>(i)]);
    }
    const Vec q = critic.q_aggregate(states, actions, true);
    const double v = value.value(n);
    SelectionTrace tr;
    tr.candidates = candidates;
    tr.q.assign(q.data(), q.data() + q.size());
    for (double qi : tr.q) tr.adv.push_back(qi - v);
    for (double p : densities) tr.density.push_back(std::max(p, kActionProbFloor));
    if (cfg.selection_rule == SelectionRule::rpex) {
      tr.weights = rpex_probs(tr.q, tr.adv, tr.density, cfg.selection);
    } else {
      tr.weights = pex_probs(tr.q, cfg.selection);
    }
    return tr;
  }

  Action greedy(const State& state) const {
    const Vec n = norm.apply(state);
    const Vec beta_mode = beta.mode(n);
    if (cfg.selection_rule == SelectionRule::direct || theta == nullptr) return to_action(beta_mode);
    const Vec theta_mode = theta->mode(n);
    const std::vector<Action> cands{to_action(beta_mode), to_action(theta_mode)};
    const SelectionTrace tr = score(n, cands, {density(n, 0, beta_mode), density(n, 1, theta_mode)});
    // Ties go to the online policy.
    return tr.weights.probs[0] > tr.weights.probs[1] ? cands[0] : cands[1];
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Enum names

std::string to_string(CriticLoss v) { return v == CriticLoss::mse ? "mse" : "huber"; }

std::string to_string(SelectionRule v) {
  switch (v) {
    case SelectionRule::direct: return "direct";
    case SelectionRule::pex: return "pex";
    case SelectionRule::rpex: return "rpex";
  }
  return "?";
}

std::string to_string(PolicyKind v) { return v == PolicyKind::gaussian ? "gaussian" : "deterministic"; }
std::string to_string(ExtractionMode v) { return v == ExtractionMode::awr ? "awr" : "align"; }

CriticLoss parse_critic_loss(const std::string& s) {
  if (s == "mse") return CriticLoss::mse;
  if (s == "huber") return CriticLoss::huber;
  throw std::invalid_argument("unknown critic loss '" + s + "'");
}

SelectionRule parse_selection_rule(const std::string& s) {
  if (s == "direct") return SelectionRule::direct;
  if (s == "pex") return SelectionRule::pex;
  if (s == "rpex") return SelectionRule::rpex;
  throw std::invalid_argument("unknown selection rule '" + s + "'");
}

PolicyKind parse_policy_kind(const std::string& s) {
  if (s == "gaussian") return PolicyKind::gaussian;
  if (s == "deterministic") return PolicyKind::deterministic;
  throw std::invalid_argument("unknown policy kind '" + s + "'");
}

ExtractionMode parse_extraction_mode(const std::string& s) {
  if (s == "awr") return ExtractionMode::awr;
  if (s == "align") return ExtractionMode::align;
  throw std::invalid_argument("unknown extraction mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// AgentConfig

void AgentConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("discount must lie in (0,1)");
  if (!(expectile.tau > 0.0 && expectile.tau < 1.0)) throw std::invalid_argument("expectile must lie in (0,1)");
  expectile.validate();
  huber.validate();
  extraction.validate();
  selection.validate();
  optim.validate();
  mix.validate();
  if (ensemble_size < 1) throw std::invalid_argument("ensemble size must be at least 1");
  if (!(quantile_level >= 0.0 && quantile_level <= 1.0)) throw std::invalid_argument("quantile level must lie in [0,1]");
  if (utd < 1) throw std::invalid_argument("UTD must be at least 1");
  if (initial_collection < 0 || offline_steps < 0 || online_steps < 0 || eval_interval < 0) {
    throw std::invalid_argument("step budgets must be non-negative");
  }
  if (eval_episodes < 1) throw std::invalid_argument("eval episodes must be at least 1");
  if (hidden.empty() || std::any_of(hidden.begin(), hidden.end(), [](int w) { return w <= 0; })) {
    throw std::invalid_argument("hidden widths must be positive");
  }
  if (!(deterministic_noise >= 0.0)) throw std::invalid_argument("deterministic noise must be >= 0");
}

int AgentConfig::effective_eval_interval() const {
  if (eval_interval > 0) return eval_interval;
  return std::max(1, online_steps / 20);
}

std::size_t AgentConfig::effective_online_capacity() const {
  if (online_capacity > 0) return online_capacity;
  return static_cast<std::size_t>(std::max(1, initial_collection + online_steps));
}

AgentConfig AgentConfig::iql() { return AgentConfig{}; }

AgentConfig AgentConfig::riql() {
  AgentConfig cfg;
  cfg.critic_loss = CriticLoss::huber;
  cfg.huber.delta = 1.0;
  cfg.ensemble_size = 5;
  cfg.quantile_level = 0.25;
  return cfg;
}

// ---------------------------------------------------------------------------

StateNormalizer::StateNormalizer(const NormalizationStats& stats) : mean(to_vec(stats.mean)), inv_std(to_vec(stats.std)) {
  inv_std = inv_std.cwiseInverse();
}

Mat StateNormalizer::apply(const Mat& states) const {
  Mat out = states;
  out.colwise() -= mean;
  return inv_std.asDiagonal() * out;
}

Vec StateNormalizer::apply(const State& state) const {
  return (to_vec(state) - mean).cwiseProduct(inv_std);
}

void normalize_batch(Batch& batch, const StateNormalizer& norm) {
  batch.s = norm.apply(batch.s);
  batch.s2 = norm.apply(batch.s2);
}

Vec BehaviorPolicy::mode(const Vec& state) const {
  return kind == PolicyKind::gaussian ? gaussian.mode(state) : deterministic.act(state);
}

std::uint64_t BehaviorPolicy::param_hash() const {
  return kind == PolicyKind::gaussian ? gaussian.param_hash() : deterministic.param_hash();
}

// ---------------------------------------------------------------------------
// Updates

double update_value(ValueNet& value, const CriticEnsemble& critic, const Batch& batch, const AgentConfig& cfg) {
  const Vec q = critic.q_aggregate(batch.s, batch.a, true);
  MlpCache cache;
  const Vec v = value.values(batch.s, &cache);
  const auto b = batch.size();
  Mat upstream(1, b);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    const LossAndGrad lg = expectile_loss(q(j) - v(j), cfg.expectile);
    loss += lg.loss;
    upstream(0, j) = -lg.grad / static_cast<double>(b);
  }
  loss /= static_cast<double>(b);
  if (!std::isfinite(loss)) throw NonFiniteError("non-finite value loss");
  value.net().adam_step(value.net().backward(cache, upstream), cfg.optim);
  return loss;
}

namespace {

struct CriticPass {
  std::vector<MlpGrads> grads;
  double loss = 0.0;
};

CriticPass critic_pass(const CriticEnsemble& critic, const ValueNet& value, const Batch& batch,
                       const AgentConfig& cfg) {
  const Vec v2 = value.values(batch.s2);
  const Vec y = batch.r + cfg.gamma * (Vec::Ones(batch.size()) - batch.done).cwiseProduct(v2);
  const Mat x = CriticEnsemble::stack_inputs(batch.s, batch.a);
  const auto b = batch.size();
  const double inv_b = 1.0 / static_cast<double>(b);
  CriticPass out;
  for (int i = 0; i < critic.size(); ++i) {
    MlpCache cache;
    const Mat q = critic.member(i).forward(x, &cache);
    Mat upstream(1, b);
    double loss = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
      const double err = y(j) - q(0, j);
      if (cfg.critic_loss == CriticLoss::mse) {
        loss += err * err;
        upstream(0, j) = -2.0 * err * inv_b;
      } else {
        const LossAndGrad lg = huber_loss(err, cfg.huber);
        loss += lg.loss;
        upstream(0, j) = -lg.grad * inv_b;
      }
    }
    out.loss += loss * inv_b / critic.size();
    out.grads.push_back(critic.member(i).backward(cache, upstream));
  }
  return out;
}

}  // namespace

std::vector<MlpGrads> critic_gradients(const CriticEnsemble& critic, const ValueNet& value, const Batch& batch,
                                       const AgentConfig& cfg) {
  return critic_pass(critic, value, batch, cfg).grads;
}

double update_critic(CriticEnsemble& critic, const ValueNet& value, const Batch& batch, const AgentConfig& cfg) {
  CriticPass pass = critic_pass(critic, value, batch, cfg);
  if (!std::isfinite(pass.loss)) throw NonFiniteError("non-finite critic loss");
  for (const auto& g : pass.grads) {
    if (!g.all_finite()) throw NonFiniteError("non-finite critic gradient");
  }
  for (int i = 0; i < critic.size(); ++i) critic.member(i).adam_step(pass.grads[static_cast<std::size_t>(i)], cfg.optim);
  critic.update_targets(cfg.optim.polyak);
  return pass.loss;
}

Vec extraction_weights(const CriticEnsemble& critic, const ValueNet& value, const Batch& batch,
                       const AgentConfig& cfg) {
  const Vec q = critic.q_aggregate(batch.s, batch.a, true);
  const Vec v = value.values(batch.s);
  Vec w(batch.size());
  for (Eigen::Index j = 0; j < w.size(); ++j) w(j) = extraction_weight(q(j) - v(j), cfg.extraction);
  return w;
}

double update_policy(GaussianPolicy& policy, const CriticEnsemble& critic, const ValueNet& value,
                     const Batch& batch, const AgentConfig& cfg) {
  const Vec w = extraction_weights(critic, value, batch, cfg);
  GaussianPolicy::Grads grads;
  const double loss = policy.weighted_nll(batch.s, batch.a, w, &grads);
  if (!std::isfinite(loss)) throw NonFiniteError("non-finite policy loss");
  policy.apply(grads, cfg.optim);
  return loss;
}

double update_policy(DeterministicPolicy& policy, const CriticEnsemble& critic, const ValueNet& value,
                     const Batch& batch, const AgentConfig& cfg) {
  const Vec w = extraction_weights(critic, value, batch, cfg);
  MlpGrads grads;
  const double loss = policy.weighted_mse(batch.s, batch.a, w, &grads);
  if (!std::isfinite(loss)) throw NonFiniteError("non-finite policy loss");
  policy.apply(grads, cfg.optim);
  return loss;
}

// ---------------------------------------------------------------------------
// Offline phase

namespace {

void put_base(Checkpoint& ckpt, const NormalizationStats& norm, const ActionBounds& bounds,
              const BehaviorPolicy& beta, const CriticEnsemble& critic, const ValueNet& value) {
  ckpt.put_vector("norm.mean", norm.mean);
  ckpt.put_vector("norm.std", norm.std);
  ckpt.put_vector("bounds.low", bounds.low);
  ckpt.put_vector("bounds.high", bounds.high);
  const std::vector<double> kind{beta.kind == PolicyKind::gaussian ? 0.0 : 1.0};
  ckpt.put_vector("beta.kind", kind);
  if (beta.kind == PolicyKind::gaussian) {
    ckpt.put_mlp("beta.net", beta.gaussian.net());
    ckpt.put_vector("beta.log_std", beta.gaussian.log_std());
  } else {
    ckpt.put_mlp("beta.net", beta.deterministic.net());
  }
  const std::vector<double> meta{static_cast<double>(critic.state_dim()), critic.quantile_level(),
                                 static_cast<double>(critic.size())};
  ckpt.put_vector("critic.meta", meta);
  for (int i = 0; i < critic.size(); ++i) {
    char idx[16];
    std::snprintf(idx, sizeof(idx), "%03d", i);
    ckpt.put_mlp(std::string("critic.online.") + idx, critic.member(i));
    ckpt.put_mlp(std::string("critic.target.") + idx, critic.target(i));
  }
  ckpt.put_mlp("value.net", value.net());
}

}  // namespace

Checkpoint OfflineArtifacts::to_checkpoint() const {
  Checkpoint ckpt;
  put_base(ckpt, norm, bounds, beta, critic, value);
  return ckpt;
}

OfflineArtifacts OfflineArtifacts::from_checkpoint(const Checkpoint& ckpt, const AgentConfig& cfg) {
  OfflineArtifacts art;
  art.cfg = cfg;
  art.norm.mean = ckpt.get_vector("norm.mean");
  art.norm.std = ckpt.get_vector("norm.std");
  art.bounds = {ckpt.get_vec("bounds.low"), ckpt.get_vec("bounds.high")};
  const auto kind = ckpt.get_vector("beta.kind");
  if (kind.size() != 1) throw CheckpointError("bad beta.kind record");
  art.beta.kind = kind[0] == 0.0 ? PolicyKind::gaussian : PolicyKind::deterministic;
  if (art.beta.kind == PolicyKind::gaussian) {
    art.beta.gaussian = GaussianPolicy(ckpt.get_mlp("beta.net"), ckpt.get_vec("beta.log_std"), art.bounds);
  } else {
    art.beta.deterministic = DeterministicPolicy(ckpt.get_mlp("beta.net"), art.bounds);
  }
  const auto meta = ckpt.get_vector("critic.meta");
  if (meta.size() != 3) throw CheckpointError("bad critic.meta record");
  std::vector<Mlp> online, targets;
  for (int i = 0; i < static_cast<int>(meta[2]); ++i) {
    char idx[16];
    std::snprintf(idx, sizeof(idx), "%03d", i);
    online.push_back(ckpt.get_mlp(std::string("critic.online.") + idx));
    targets.push_back(ckpt.get_mlp(std::string("critic.target.") + idx));
  }
  art.critic = CriticEnsemble(static_cast<int>(meta[0]), std::move(online), std::move(targets), meta[1]);
  art.value = ValueNet(ckpt.get_mlp("value.net"));
  return art;
}

OfflineArtifacts offline_train(const TransitionDataset& ds, const AgentConfig& cfg, const ActionBounds& bounds,
                               std::uint64_t seed, const LogFn& log) {
  cfg.validate();
  if (ds.records.empty()) throw std::invalid_argument("offline dataset is empty");
  if (bounds.dim() != ds.action_dim) throw std::invalid_argument("action bounds do not match the dataset");
  OfflineArtifacts art;
  art.cfg = cfg;
  art.bounds = bounds;
  if (cfg.normalize_states) {
    std::vector<std::vector<double>> s, s2;
    s.reserve(ds.size());
    s2.reserve(ds.size());
    for (const auto& t : ds.records) {
      s.push_back(t.s);
      s2.push_back(t.s2);
    }
    art.norm = compute_norm_stats(s, s2);
  } else {
    art.norm = NormalizationStats::identity(static_cast<std::size_t>(ds.state_dim));
  }
  const StateNormalizer norm(art.norm);

  Rng init(derive_seed(seed, kStreamInit));
  art.beta.kind = cfg.policy_kind;
  if (cfg.policy_kind == PolicyKind::gaussian) {
    art.beta.gaussian = GaussianPolicy(ds.state_dim, bounds, cfg.hidden, init);
  } else {
    art.beta.deterministic = DeterministicPolicy(ds.state_dim, bounds, cfg.hidden, init);
  }
  art.critic = CriticEnsemble(ds.state_dim, ds.action_dim, cfg.ensemble_size, cfg.hidden, cfg.quantile_level, init);
  art.value = ValueNet(ds.state_dim, cfg.hidden, init);

  ReplayBuffer buf = ReplayBuffer::from_dataset(ds);
  Rng rng(derive_seed(seed, kStreamBatches));
  const int report_every = std::max(1, cfg.offline_steps / 10);
  for (int step = 1; step <= cfg.offline_steps; ++step) {
    Batch batch = sample_uniform(buf, cfg.mix.batch_size, rng);
    normalize_batch(batch, norm);
    double lv = 0.0, lq = 0.0, lp = 0.0;
    guarded(art.counters, log, "value", [&] { lv = update_value(art.value, art.critic, batch, cfg); ++art.counters.value_steps; });
    guarded(art.counters, log, "critic", [&] { lq = update_critic(art.critic, art.value, batch, cfg); ++art.counters.critic_steps; });
    guarded(art.counters, log, "policy", [&] {
      lp = cfg.policy_kind == PolicyKind::gaussian ? update_policy(art.beta.gaussian, art.critic, art.value, batch, cfg)
                                                   : update_policy(art.beta.deterministic, art.critic, art.value, batch, cfg);
      ++art.counters.policy_steps;
    });
    ++art.counters.gradient_passes;
    if (step % report_every == 0) {
      std::ostringstream os;
      os << "offline step " << step << "/" << cfg.offline_steps << " value_loss " << lv << " critic_loss " << lq
         << " policy_loss " << lp;
      log_if(log, os.str());
    }
  }
  return art;
}

AttackOracle train_attack_oracle(const TransitionDataset& ds, const AgentConfig& cfg, const ActionBounds& bounds,
                                 std::uint64_t seed, const LogFn& log) {
  AgentConfig oc = cfg;
  oc.policy_kind = PolicyKind::deterministic;
  OfflineArtifacts art = offline_train(ds, oc, bounds, seed, log);
  return AttackOracle{std::move(art.critic), std::move(art.beta.deterministic), std::move(art.norm)};
}

// ---------------------------------------------------------------------------
// Evaluation

double final_summary(const std::vector<EvalPoint>& evals) {
  if (evals.size() < 3) throw std::invalid_argument("summary needs at least three evaluations");
  double s = 0.0;
  for (std::size_t i = evals.size() - 3; i < evals.size(); ++i) s += evals[i].mean_return;
  return s / 3.0;
}

EvalPoint evaluate_policy(const Environment& env, const std::function<Action(const State&)>& act, int episodes,
                          std::uint64_t seed, std::uint64_t step) {
  if (episodes < 1) throw std::invalid_argument("need at least one evaluation episode");
  EvalPoint pt;
  pt.step = step;
  Rng rng(seed);
  for (int e = 0; e < episodes; ++e) {
    Episode ep(env, env.reset(rng));
    double ret = 0.0;
    while (!ep.over()) ret += ep.step(act(ep.state()), rng).r;
    pt.returns.push_back(ret);
    pt.lengths.push_back(ep.t());
    pt.reached_goal.push_back(ep.terminal());
  }
  double s = 0.0;
  for (double r : pt.returns) s += r;
  pt.mean_return = s / episodes;
  return pt;
}

// ---------------------------------------------------------------------------
// Online phase

OnlineAgent::OnlineAgent(const OfflineArtifacts& artifacts, const TransitionDataset& offline_data, std::uint64_t seed)
    : cfg_(artifacts.cfg),
      norm_stats_(artifacts.norm),
      norm_(artifacts.norm),
      bounds_(artifacts.bounds),
      beta_(artifacts.beta),
      critic_(artifacts.critic),
      value_(artifacts.value),
      offline_(ReplayBuffer::from_dataset(offline_data)),
      online_(cfg_.effective_online_capacity(), offline_data.state_dim, offline_data.action_dim) {
  cfg_.validate();
  Rng init(derive_seed(seed, kStreamTheta));
  theta_ = GaussianPolicy(offline_data.state_dim, bounds_, cfg_.hidden, init);
}

double OnlineAgent::candidate_density(const Vec& norm_state, int index, const Vec& action) const {
  return CompositeView{cfg_, norm_, beta_, &theta_, critic_, value_}.density(norm_state, index, action);
}

SelectionTrace OnlineAgent::score_candidates(const State& state, const std::vector<Action>& candidates,
                                             const std::vector<double>& densities) const {
  return CompositeView{cfg_, norm_, beta_, &theta_, critic_, value_}.score(norm_.apply(state), candidates, densities);
}

SelectionTrace OnlineAgent::sample_selection(const State& state, Rng& rng) const {
  const CompositeView view{cfg_, norm_, beta_, &theta_, critic_, value_};
  const Vec n = norm_.apply(state);
  Vec a1;
  double p1 = 0.0;
  if (beta_.kind == PolicyKind::gaussian) {
    const PolicySample smp = beta_.gaussian.sample(n, rng);
    a1 = smp.action;
    p1 = std::exp(smp.log_density);
  } else {
    a1 = beta_.deterministic.act(n);
    for (Eigen::Index d = 0; d < a1.size(); ++d) a1(d) += cfg_.deterministic_noise * standard_normal(rng);
    a1 = bounds_.clip(a1);
    if (cfg_.selection_rule != SelectionRule::direct) p1 = std::exp(theta_.log_density(n, a1));
  }
  if (cfg_.selection_rule == SelectionRule::direct) {
    SelectionTrace tr;
    tr.candidates = {to_action(a1)};
    tr.density = {std::max(p1, kActionProbFloor)};
    tr.weights.probs = {1.0};
    tr.weights.unnormalized = {1.0};
    tr.chosen = 0;
    tr.action = tr.candidates[0];
    return tr;
  }
  const PolicySample s2 = theta_.sample(n, rng);
  SelectionTrace tr = view.score(n, {to_action(a1), to_action(s2.action)}, {p1, std::exp(s2.log_density)});
  tr.chosen = sample_categorical(tr.weights.probs, rng);
  tr.action = tr.candidates[static_cast<std::size_t>(tr.chosen)];
  return tr;
}

SelectionTrace OnlineAgent::select_action_explore(const State& state, Rng& rng) {
  SelectionTrace tr = sample_selection(state, rng);
  ++counters_.explore_selections;
  if (tr.chosen == 1) ++counters_.explore_online_chosen;
  if (tr.weights.fell_back) ++counters_.selection_fallbacks;
  return tr;
}

Action OnlineAgent::select_action_eval(const State& state) const {
  return CompositeView{cfg_, norm_, beta_, &theta_, critic_, value_}.greedy(state);
}

void OnlineAgent::update_step(const Batch& batch) {
  guarded(counters_, log_, "value", [&] { update_value(value_, critic_, batch, cfg_); ++counters_.value_steps; });
  guarded(counters_, log_, "critic", [&] { update_critic(critic_, value_, batch, cfg_); ++counters_.critic_steps; });
  guarded(counters_, log_, "policy", [&] {
    if (cfg_.selection_rule != SelectionRule::direct) {
      update_policy(theta_, critic_, value_, batch, cfg_);
    } else if (beta_.kind == PolicyKind::gaussian) {
      update_policy(beta_.gaussian, critic_, value_, batch, cfg_);
    } else {
      update_policy(beta_.deterministic, critic_, value_, batch, cfg_);
    }
    ++counters_.policy_steps;
  });
}

void OnlineAgent::gradient_pass(Rng& rng) {
  Batch batch = mixed_sample(offline_, online_, cfg_.mix, rng);
  normalize_batch(batch, norm_);
  update_step(batch);
  ++counters_.gradient_passes;
}

EvalPoint OnlineAgent::evaluate(const Environment& env, int episodes, std::uint64_t seed, std::uint64_t step) const {
  EvalPoint pt = evaluate_policy(env, [this](const State& s) { return select_action_eval(s); }, episodes, seed, step);
  pt.gradient_passes = counters_.gradient_passes;
  return pt;
}

std::vector<EvalPoint> OnlineAgent::online_train(const Environment& env, const CorruptionSpec& spec,
                                                 const AttackOracle* oracle, Rng& rng,
                                                 const std::function<void(const EvalPoint&)>& on_eval,
                                                 const LogFn& log) {
  spec.validate();
  log_ = log;
  const std::uint64_t base = rng();
  Rng explore_rng(derive_seed(base, kStreamExplore));
  Rng env_rng(derive_seed(base, kStreamEnv));
  Rng corrupt_rng(derive_seed(base, kStreamCorrupt));
  Rng batch_rng(derive_seed(base, kStreamOnlineBatches));
  const std::uint64_t eval_seed = derive_seed(base, kStreamEval);

  Episode ep(env, env.reset(env_rng));
  auto interact = [&] {
    const SelectionTrace tr = select_action_explore(ep.state(), explore_rng);
    const Transition t = ep.step(tr.action, env_rng);
    const CorruptionOutcome out = corrupt_transition(t, spec, corrupt_rng, oracle);
    if (out.corrupted) ++counters_.corrupted_transitions;
    if (out.attack_skipped) {
      ++counters_.skipped_attacks;
      log_if(log, "adversarial attack skipped (non-finite gradient)");
    }
    online_.insert(out.transition);
    ++counters_.env_steps;
    if (ep.over()) ep = Episode(env, env.reset(env_rng));
  };

  for (int i = 0; i < cfg_.initial_collection; ++i) interact();

  std::vector<EvalPoint> evals;
  const int interval = cfg_.effective_eval_interval();
  for (int step = 1; step <= cfg_.online_steps; ++step) {
    interact();
    for (int m = 0; m < cfg_.utd; ++m) gradient_pass(batch_rng);
    if (step % interval == 0) {
      EvalPoint pt = evaluate(env, cfg_.eval_episodes, derive_seed(eval_seed, static_cast<std::uint64_t>(step)),
                              static_cast<std::uint64_t>(step));
      if (on_eval) on_eval(pt);
      std::ostringstream os;
      os << "online step " << step << "/" << cfg_.online_steps << " eval mean return " << pt.mean_return;
      log_if(log, os.str());
      evals.push_back(std::move(pt));
    }
  }
  log_ = {};
  return evals;
}

Checkpoint OnlineAgent::to_checkpoint() const {
  Checkpoint ckpt;
  put_base(ckpt, norm_stats_, bounds_, beta_, critic_, value_);
  ckpt.put_mlp("theta.net", theta_.net());
  ckpt.put_vector("theta.log_std", theta_.log_std());
  return ckpt;
}

CheckpointPolicy::CheckpointPolicy(const Checkpoint& ckpt, const AgentConfig& cfg)
    : cfg_(cfg), base_(OfflineArtifacts::from_checkpoint(ckpt, cfg)), norm_(base_.norm) {
  if (ckpt.has("theta.net")) {
    theta_ = GaussianPolicy(ckpt.get_mlp("theta.net"), ckpt.get_vec("theta.log_std"), base_.bounds);
    has_theta_ = true;
  }
}

Action CheckpointPolicy::act(const State& state) const {
  return CompositeView{cfg_, norm_, base_.beta, has_theta_ ? &theta_ : nullptr, base_.critic, base_.value}.greedy(state);
}

}  // namespace rpexlab
