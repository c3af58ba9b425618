#include <gtest/gtest.h>

#include <cmath>

#include "rpexlab/agents.hpp"

using namespace rpexlab;

namespace {

// Linear net: out = w . x + b.
Mlp linear(std::vector<double> w, double b) {
  const int in = static_cast<int>(w.size());
  w.push_back(b);
  return Mlp::from_params({in, 1}, w);
}

CriticEnsemble linear_critic(std::vector<double> w, double b) {
  const Mlp m = linear(std::move(w), b);
  return CriticEnsemble(2, {m}, {m}, 0.25);
}

Batch random_batch(int n, Rng& rng, double done = 0.0) {
  Batch b;
  b.s = Mat::Random(2, n);
  b.a = Mat::Random(2, n);
  b.s2 = Mat::Random(2, n);
  b.r = Vec::Zero(n);
  for (int j = 0; j < n; ++j) b.r(j) = uniform(rng, -1.0, 1.0);
  b.done = Vec::Constant(n, done);
  b.from_offline.assign(static_cast<std::size_t>(n), true);
  return b;
}

AgentConfig small_config() {
  AgentConfig cfg;
  cfg.hidden = {16, 16};
  cfg.mix.batch_size = 32;
  cfg.initial_collection = 10;
  cfg.online_steps = 20;
  cfg.offline_steps = 5;
  cfg.eval_episodes = 2;
  return cfg;
}

TransitionDataset maze_data(std::uint64_t seed) {
  return collect_dataset(GridMaze(), BehaviorSpec{0.5}, 300, seed);
}

// Hand-built artifacts around the given critic, on GridMaze dimensions.
OfflineArtifacts handmade(const AgentConfig& cfg, CriticEnsemble critic, std::uint64_t seed) {
  Rng rng(seed);
  OfflineArtifacts art;
  art.cfg = cfg;
  art.norm = NormalizationStats::identity(2);
  art.bounds = ActionBounds::symmetric(2);
  art.beta.gaussian = GaussianPolicy(2, art.bounds, cfg.hidden, rng);
  art.critic = std::move(critic);
  art.value = ValueNet(linear({0.0, 0.0}, 0.0));
  return art;
}

}  // namespace

TEST(UpdateValue, HandValueWithConstantCritic) {
  Rng rng(1);
  ValueNet v(linear({0.0, 0.0}, 0.0));
  const CriticEnsemble q = linear_critic({0.0, 0.0, 0.0, 0.0}, 2.0);
  AgentConfig cfg;
  EXPECT_NEAR(update_value(v, q, random_batch(16, rng), cfg), 0.7 * 4.0, 1e-15);
}

TEST(UpdateValue, HalfExpectileIsHalfSquaredError) {
  Rng rng(2), init(3);
  ValueNet v(2, {8}, init);
  const CriticEnsemble q = linear_critic({0.3, -0.2, 1.0, 0.5}, 0.1);
  AgentConfig cfg;
  cfg.expectile.tau = 0.5;
  const Batch b = random_batch(64, rng);
  const Vec diff = q.q_aggregate(b.s, b.a, true) - v.values(b.s);
  EXPECT_NEAR(update_value(v, q, b, cfg), 0.5 * diff.squaredNorm() / 64.0, 1e-13);
}

TEST(UpdateValue, LossDecreasesOnFixedBatch) {
  Rng rng(4), init(5);
  ValueNet v(2, {16, 16}, init);
  const CriticEnsemble q = linear_critic({0.5, -1.0, 1.0, 0.0}, 0.3);
  AgentConfig cfg;
  cfg.optim.lr = 1e-3;
  const Batch b = random_batch(64, rng);
  const double first = update_value(v, q, b, cfg);
  double last = first;
  for (int i = 0; i < 99; ++i) last = update_value(v, q, b, cfg);
  EXPECT_LT(last, 0.5 * first);
}

TEST(UpdateValue, DegenerateConfigRecoversBatchMean) {
  Rng rng(6), init(7);
  ValueNet v(2, {8}, init);
  // Q depends on the action only, so with one state V should settle at the batch mean of Q.
  const CriticEnsemble q = linear_critic({0.0, 0.0, 2.0, 0.0}, 0.5);
  AgentConfig cfg;
  cfg.expectile.tau = 0.5;
  cfg.optim.lr = 1e-2;
  Batch b = random_batch(128, rng);
  b.s = Mat::Constant(2, 128, 0.3);
  const double target = q.q_aggregate(b.s, b.a, true).mean();
  for (int i = 0; i < 3000; ++i) update_value(v, q, b, cfg);
  EXPECT_NEAR(v.value(b.s.col(0)), target, 1e-2);
}

TEST(UpdateCritic, TerminalTargetIsReward) {
  Rng rng(8);
  AgentConfig cfg;
  const ValueNet v(linear({0.0, 0.0}, 5.0));
  const CriticEnsemble zero = linear_critic({0.0, 0.0, 0.0, 0.0}, 0.0);
  const Batch done = random_batch(32, rng, 1.0);
  CriticEnsemble q1 = zero;
  EXPECT_NEAR(update_critic(q1, v, done, cfg), done.r.squaredNorm() / 32.0, 1e-14);
  const Batch live = random_batch(32, rng, 0.0);
  CriticEnsemble q2 = zero;
  const Vec y = live.r.array() + 0.99 * 5.0;
  EXPECT_NEAR(update_critic(q2, v, live, cfg), y.squaredNorm() / 32.0, 1e-12);
  cfg.gamma = 1e-300;
  CriticEnsemble q3 = zero;
  EXPECT_NEAR(update_critic(q3, v, live, cfg), live.r.squaredNorm() / 32.0, 1e-12);
}

TEST(UpdateCritic, TargetsFollowPolyak) {
  Rng rng(9), init(10);
  AgentConfig cfg;
  CriticEnsemble q(2, 2, 3, {8}, 0.25, init);
  const ValueNet v(2, {8}, init);
  const auto before = q.target(1).flat_params();
  update_critic(q, v, random_batch(16, rng), cfg);
  const auto online = q.member(1).flat_params();
  const auto after = q.target(1).flat_params();
  for (std::size_t i = 0; i < after.size(); ++i) {
    EXPECT_NEAR(after[i], 0.995 * before[i] + 0.005 * online[i], 1e-15);
  }
}

TEST(UpdateCritic, HuberDampsRewardOutlier) {
  Rng rng(11), init(12);
  AgentConfig mse, huber;
  huber.critic_loss = CriticLoss::huber;
  const CriticEnsemble q(2, 2, 1, {16}, 0.25, init);
  const ValueNet v(2, {16}, init);
  Batch b = random_batch(32, rng);
  b.r(7) = 30.0;
  auto norm = [](const MlpGrads& g) {
    double s = 0.0;
    for (double x : g.flatten()) s += x * x;
    return std::sqrt(s);
  };
  const double n_mse = norm(critic_gradients(q, v, b, mse)[0]);
  const double n_huber = norm(critic_gradients(q, v, b, huber)[0]);
  EXPECT_LT(n_huber, n_mse);
}

TEST(Extraction, AwrWeightRatio) {
  Rng rng(13);
  // Q = a_0, V = 0, so the advantage is the first action coordinate.
  const CriticEnsemble q = linear_critic({0.0, 0.0, 1.0, 0.0}, 0.0);
  const ValueNet v(linear({0.0, 0.0}, 0.0));
  Batch b = random_batch(2, rng);
  b.a << 1.0, -1.0, 0.0, 0.0;
  AgentConfig cfg;
  const Vec w = extraction_weights(q, v, b, cfg);
  EXPECT_NEAR(w(0), std::exp(3.0), 1e-12);
  EXPECT_NEAR(w(1), std::exp(-3.0), 1e-15);
  EXPECT_NEAR(w(0) / w(1), std::exp(6.0), 1e-9);
}

TEST(Extraction, AlignWithZeroAdvantageIsBehaviorCloning) {
  Rng rng(14), init(15);
  const CriticEnsemble q = linear_critic({0.0, 0.0, 0.0, 0.0}, 0.4);
  const ValueNet v(linear({0.0, 0.0}, 0.4));
  AgentConfig cfg;
  cfg.extraction.mode = ExtractionMode::align;
  const Batch b = random_batch(32, rng);
  EXPECT_EQ(extraction_weights(q, v, b, cfg), Vec::Ones(32));
  GaussianPolicy a(2, ActionBounds::symmetric(2), {8}, init);
  GaussianPolicy bc = a;
  update_policy(a, q, v, b, cfg);
  GaussianPolicy::Grads g;
  bc.weighted_nll(b.s, b.a, Vec::Ones(32), &g);
  bc.apply(g, cfg.optim);
  EXPECT_EQ(a.flat_params(), bc.flat_params());
}

TEST(Selection, FrequenciesMatchProbabilities) {
  AgentConfig cfg = small_config();
  const OfflineArtifacts art = handmade(cfg, linear_critic({0.1, 0.2, 0.8, -0.5}, 0.0), 16);
  const OnlineAgent agent(art, maze_data(17), 18);
  Rng rng(19);
  const State s{2.0, 3.0};
  const int n = 100000;
  double chosen = 0.0, expected = 0.0, var = 0.0;
  for (int i = 0; i < n; ++i) {
    const SelectionTrace tr = agent.sample_selection(s, rng);
    const double p = tr.weights.probs[1];
    chosen += tr.chosen;
    expected += p;
    var += p * (1.0 - p);
    EXPECT_EQ(tr.action, tr.candidates[static_cast<std::size_t>(tr.chosen)]);
  }
  EXPECT_GT(var, 100.0);
  EXPECT_LT(std::abs(chosen - expected), 3.0 * std::sqrt(var));
}

TEST(Selection, ZeroKappaRpexMatchesPex) {
  AgentConfig pex = small_config(), rpex = small_config();
  pex.selection_rule = SelectionRule::pex;
  rpex.selection.ipw_coeff = 0.0;
  const CriticEnsemble q = linear_critic({0.1, 0.2, 0.8, -0.5}, 0.0);
  const TransitionDataset ds = maze_data(20);
  const OnlineAgent a(handmade(pex, q, 21), ds, 22), b(handmade(rpex, q, 21), ds, 22);
  Rng ra(23), rb(23);
  for (int i = 0; i < 500; ++i) {
    const State s{static_cast<double>(i % 8), static_cast<double>((i / 8) % 8)};
    const SelectionTrace x = a.sample_selection(s, ra), y = b.sample_selection(s, rb);
    ASSERT_EQ(x.candidates, y.candidates);
    EXPECT_NEAR(x.weights.probs[1], y.weights.probs[1], 1e-14);
    EXPECT_EQ(x.chosen, y.chosen);
  }
}

TEST(Selection, PexInvariantToQShift) {
  AgentConfig cfg = small_config();
  cfg.selection_rule = SelectionRule::pex;
  const TransitionDataset ds = maze_data(24);
  const OnlineAgent a(handmade(cfg, linear_critic({0.1, 0.2, 0.8, -0.5}, 0.0), 25), ds, 26);
  const OnlineAgent b(handmade(cfg, linear_critic({0.1, 0.2, 0.8, -0.5}, 40.0), 25), ds, 26);
  Rng ra(27), rb(27);
  for (int i = 0; i < 500; ++i) {
    const State s{static_cast<double>(i % 8), 1.0};
    const SelectionTrace x = a.sample_selection(s, ra), y = b.sample_selection(s, rb);
    EXPECT_NEAR(x.weights.probs[1], y.weights.probs[1], 1e-12);
  }
}

TEST(Selection, IdenticalCandidatesGiveSameAction) {
  AgentConfig cfg = small_config();
  const OnlineAgent agent(handmade(cfg, linear_critic({0.1, 0.2, 0.8, -0.5}, 0.0), 28), maze_data(29), 30);
  const Action a{0.3, -0.4};
  const SelectionTrace tr = agent.score_candidates({1.0, 1.0}, {a, a}, {0.2, 0.2});
  EXPECT_DOUBLE_EQ(tr.weights.probs[0], 0.5);
  EXPECT_EQ(tr.candidates[0], tr.candidates[1]);
}

TEST(Selection, GreedyTieGoesToOnlinePolicy) {
  AgentConfig cfg = small_config();
  cfg.selection_rule = SelectionRule::pex;
  // Constant Q: both candidates always weigh the same.
  const OnlineAgent agent(handmade(cfg, linear_critic({0.0, 0.0, 0.0, 0.0}, 1.0), 31), maze_data(32), 33);
  for (const State& s : {State{0.0, 0.0}, State{3.0, 5.0}}) {
    const Vec n = agent.normalizer().apply(s);
    const Vec theta = agent.theta().mode(n);
    ASSERT_NE(theta, agent.beta().mode(n));
    EXPECT_EQ(agent.select_action_eval(s), Action(theta.data(), theta.data() + 2));
  }
}

TEST(Selection, GreedyFollowsCraftedQGap) {
  AgentConfig cfg = small_config();
  cfg.selection_rule = SelectionRule::pex;
  const OnlineAgent agent(handmade(cfg, linear_critic({0.0, 0.0, 1.0, 0.0}, 0.0), 34), maze_data(35), 36);
  const SelectionTrace tr = agent.score_candidates({1.0, 1.0}, {{0.0, 0.0}, {1.0, 0.0}}, {0.1, 0.1});
  EXPECT_EQ(tr.q, (std::vector<double>{0.0, 1.0}));
  EXPECT_NEAR(tr.weights.probs[1], 1.0 / (1.0 + std::exp(-3.0)), 1e-15);
  for (const State& s : {State{0.0, 0.0}, State{3.0, 5.0}, State{6.0, 2.0}}) {
    const Vec n = agent.normalizer().apply(s);
    const Vec b = agent.beta().mode(n), t = agent.theta().mode(n);
    const Action want = b(0) > t(0) ? Action{b(0), b(1)} : Action{t(0), t(1)};
    EXPECT_EQ(agent.select_action_eval(s), want);
  }
}

TEST(Selection, DirectRuleSamplesBehaviorOnly) {
  AgentConfig cfg = small_config();
  cfg.selection_rule = SelectionRule::direct;
  OnlineAgent agent(handmade(cfg, linear_critic({0.0, 0.0, 1.0, 0.0}, 0.0), 37), maze_data(38), 39);
  Rng rng(40);
  const SelectionTrace tr = agent.select_action_explore({1.0, 1.0}, rng);
  EXPECT_EQ(tr.candidates.size(), 1u);
  EXPECT_EQ(tr.chosen, 0);
  const Vec m = agent.beta().mode(agent.normalizer().apply(State{1.0, 1.0}));
  EXPECT_EQ(agent.select_action_eval({1.0, 1.0}), Action(m.data(), m.data() + 2));
}

TEST(OnlineTrain, UtdCounterAndFrozenBehavior) {
  const GridMaze maze;
  const TransitionDataset ds = maze_data(41);
  for (int m : {1, 4}) {
    AgentConfig cfg = small_config();
    cfg.utd = m;
    const OfflineArtifacts art = offline_train(ds, cfg, ActionBounds::symmetric(2), 42);
    OnlineAgent agent(art, ds, 43);
    const std::uint64_t hash = agent.beta().param_hash();
    Rng rng(44);
    const auto evals = agent.online_train(maze, CorruptionSpec{}, nullptr, rng);
    EXPECT_EQ(agent.counters().gradient_passes, static_cast<std::uint64_t>(20 * m));
    EXPECT_EQ(agent.counters().env_steps, 30u);
    EXPECT_EQ(agent.online_buffer().size(), 30u);
    EXPECT_EQ(agent.beta().param_hash(), hash);
    EXPECT_EQ(evals.size(), 20u);
    EXPECT_EQ(evals.back().gradient_passes, static_cast<std::uint64_t>(20 * m));
  }
}

TEST(OnlineTrain, EveryStoredTransitionCorruptedOnce) {
  const GridMaze maze;
  const TransitionDataset ds = maze_data(45);
  AgentConfig cfg = small_config();
  const OfflineArtifacts art = offline_train(ds, cfg, ActionBounds::symmetric(2), 46);
  CorruptionSpec spec;
  spec.element = CorruptElement::reward;
  spec.online_rate = 1.0;
  spec.online_scale = 1.0;
  OnlineAgent agent(art, ds, 47);
  Rng rng(48);
  agent.online_train(maze, spec, nullptr, rng);
  EXPECT_EQ(agent.counters().corrupted_transitions, agent.counters().env_steps);
  // Every stored reward is a fresh U[-30, 30] draw, never a clean maze reward.
  for (std::size_t i = 0; i < agent.online_buffer().size(); ++i) {
    EXPECT_LE(std::abs(agent.online_buffer().at(i).r), 30.0);
  }
}

TEST(Checkpoint, OnlineRoundTripPreservesEvaluation) {
  const GridMaze maze;
  const TransitionDataset ds = maze_data(49);
  AgentConfig cfg = small_config();
  const OfflineArtifacts art = offline_train(ds, cfg, ActionBounds::symmetric(2), 50);
  const OfflineArtifacts back = OfflineArtifacts::from_checkpoint(Checkpoint::deserialize(art.to_checkpoint().serialize()), cfg);
  EXPECT_EQ(back.beta.param_hash(), art.beta.param_hash());

  OnlineAgent agent(art, ds, 51);
  Rng rng(52);
  agent.online_train(maze, CorruptionSpec{}, nullptr, rng);
  const CheckpointPolicy loaded(Checkpoint::deserialize(agent.to_checkpoint().serialize()), cfg);
  EXPECT_TRUE(loaded.has_online_policy());
  const EvalPoint x = agent.evaluate(maze, 5, 53, 0);
  const EvalPoint y = evaluate_policy(maze, [&](const State& s) { return loaded.act(s); }, 5, 53);
  EXPECT_EQ(x.returns, y.returns);
  EXPECT_EQ(x.lengths, y.lengths);
}

TEST(Summary, LastThreeEvaluations) {
  std::vector<EvalPoint> evals(5);
  for (int i = 0; i < 5; ++i) evals[static_cast<std::size_t>(i)].mean_return = i;
  EXPECT_DOUBLE_EQ(final_summary(evals), 3.0);
  evals.resize(2);
  EXPECT_THROW(final_summary(evals), std::invalid_argument);
}

TEST(AgentConfig, ValidationAndPresets) {
  AgentConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.gamma = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = AgentConfig{};
  cfg.utd = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = AgentConfig{};
  cfg.expectile.tau = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  const AgentConfig r = AgentConfig::riql();
  EXPECT_EQ(r.critic_loss, CriticLoss::huber);
  EXPECT_EQ(r.ensemble_size, 5);
  EXPECT_EQ(r.quantile_level, 0.25);
  EXPECT_EQ(cfg.effective_eval_interval(), 1000);
  EXPECT_EQ(parse_selection_rule(to_string(SelectionRule::rpex)), SelectionRule::rpex);
  EXPECT_THROW(parse_critic_loss("l1"), std::invalid_argument);
}
