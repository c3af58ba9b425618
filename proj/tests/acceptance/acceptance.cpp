// Acceptance checks C1..C10. Usage: rpexlab_acceptance [N ...]; no arguments
// runs all ten. Each check prints its evidence and then exactly one
// "C<N> PASS|FAIL" line. Exit status is nonzero if any selected check fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rpexlab/agents.hpp"
#include "rpexlab/checkpoint.hpp"
#include "rpexlab/core_math.hpp"
#include "rpexlab/corruption.hpp"
#include "rpexlab/envs.hpp"
#include "rpexlab/harness.hpp"
#include "rpexlab/neural.hpp"
#include "rpexlab/replay.hpp"

using namespace rpexlab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  double limit_s;
  std::function<Outcome()> run;
};

template <typename... Args>
void note(int id, const char* fmt, Args... args) {
  std::printf("  c%d: ", id);
  std::printf(fmt, args...);
  std::printf("\n");
  std::fflush(stdout);
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("rpexlab_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// C1

Outcome c1_selection_exactness() {
  const int tuples = 1000, draws = 100000;
  SelectionConfig cfg;
  SelectionConfig flat = cfg;
  flat.ipw_coeff = 0.0;
  Rng gen(0xC1), draw(0xC1C1);
  int exceed[2] = {0, 0};
  double max_z[2] = {0.0, 0.0};
  double kappa0_gap = 0.0;
  for (int t = 0; t < tuples; ++t) {
    const std::vector<double> q{uniform(gen, -2.0, 2.0), uniform(gen, -2.0, 2.0)};
    const std::vector<double> adv{uniform(gen, -2.0, 2.0), uniform(gen, -2.0, 2.0)};
    const std::vector<double> p{std::exp(uniform(gen, std::log(1e-3), 0.0)), std::exp(uniform(gen, std::log(1e-3), 0.0))};
    const SelectionWeights rules[2] = {pex_probs(q, cfg), rpex_probs(q, adv, p, cfg)};
    const SelectionWeights zero = rpex_probs(q, adv, p, flat);
    for (int k = 0; k < 2; ++k) kappa0_gap = std::max(kappa0_gap, std::abs(zero.probs[k] - rules[0].probs[k]));
    for (int r = 0; r < 2; ++r) {
      const double p1 = rules[r].probs[1];
      int hits = 0;
      for (int i = 0; i < draws; ++i) hits += sample_categorical(rules[r].probs, draw);
      const double sd = std::sqrt(draws * p1 * (1.0 - p1));
      const double dev = std::abs(hits - draws * p1);
      const double z = sd > 0.0 ? dev / sd : (dev == 0.0 ? 0.0 : INFINITY);
      if (z > 3.0) ++exceed[r];
      max_z[r] = std::max(max_z[r], z);
    }
  }
  // Under exact sampling each tuple leaves the 3-sigma band with probability
  // 0.0027, so about 2.7 of 1000 are expected outside; more than 8 has
  // probability ~0.4%. No tuple may reach z = 4.5 (family-wise ~1.4%).
  note(1, "pex: %d/%d tuples outside 3 sigma, max |z| %.3f", exceed[0], tuples, max_z[0]);
  note(1, "rpex: %d/%d tuples outside 3 sigma, max |z| %.3f", exceed[1], tuples, max_z[1]);
  note(1, "max |rpex(kappa=0) - pex| = %.3g", kappa0_gap);
  Outcome out;
  out.pass = exceed[0] <= 8 && exceed[1] <= 8 && max_z[0] < 4.5 && max_z[1] < 4.5 && kappa0_gap <= 1e-14;
  std::ostringstream os;
  os << "3-sigma exceedances pex " << exceed[0] << ", rpex " << exceed[1] << "; kappa=0 gap " << kappa0_gap;
  out.detail = os.str();
  return out;
}

// ---------------------------------------------------------------------------
// C2

// Directional derivative of f along d, central differences with two
// Richardson refinements.
double richardson_derivative(const std::function<double(double)>& f, double h) {
  auto central = [&](double s) { return (f(s) - f(-s)) / (2.0 * s); };
  const double d1 = central(h), d2 = central(h / 2.0), d4 = central(h / 4.0);
  const double r1 = (4.0 * d2 - d1) / 3.0, r2 = (4.0 * d4 - d2) / 3.0;
  return (16.0 * r2 - r1) / 15.0;
}

Outcome c2_maximality() {
  const int instances = 1000, points = 1000;
  const SelectionConfig sel;
  const double alpha = sel.temperature, kappa = sel.ipw_coeff;
  Rng gen(0xC2);
  double worst_margin = INFINITY, worst_grad = 0.0;
  double gap_sum = 0.0, gap_max = 0.0;
  int failures = 0;
  for (int n = 0; n < instances; ++n) {
    const int k = 2 + static_cast<int>(uniform_index(gen, 3));
    std::vector<double> q(k), adv(k), p(k);
    for (int i = 0; i < k; ++i) {
      q[i] = uniform(gen, -1.0, 1.0);
      adv[i] = uniform(gen, -1.0, 1.0);
      p[i] = uniform(gen, 0.1, 1.0);
    }
    const std::vector<double> star = softmax_of_sum_probs(q, adv, p, alpha, kappa).probs;
    const double f_star = rpex_objective(star, q, adv, p, alpha, kappa);

    double best_random = -INFINITY;
    for (int j = 0; j < points; ++j) {
      std::vector<double> x(k);
      double s = 0.0;
      for (double& v : x) {
        v = -std::log(1.0 - uniform01(gen));  // Dirichlet(1, ..., 1)
        s += v;
      }
      for (double& v : x) v /= s;
      best_random = std::max(best_random, rpex_objective(x, q, adv, p, alpha, kappa));
    }
    const double margin = f_star - best_random;
    worst_margin = std::min(worst_margin, margin);

    // Tangent-space gradient: derivatives along e_i - e_K give g_i - g_K;
    // subtracting their mean over all K coordinates projects onto the simplex.
    std::vector<double> d(k, 0.0);
    for (int i = 0; i + 1 < k; ++i) {
      const double h = std::min(star[i], star[k - 1]) / 8.0;
      d[i] = richardson_derivative(
          [&](double t) {
            std::vector<double> x = star;
            x[i] += t;
            x[k - 1] -= t;
            return rpex_objective(x, q, adv, p, alpha, kappa);
          },
          h);
    }
    const double mean_d = mean_of(d);
    double norm2 = 0.0;
    for (double v : d) norm2 += (v - mean_d) * (v - mean_d);
    const double grad = std::sqrt(norm2);
    worst_grad = std::max(worst_grad, grad);
    if (margin < -1e-9 || grad >= 1e-8) ++failures;

    const double gap = f_star - rpex_objective(rpex_probs(q, adv, p, sel).probs, q, adv, p, alpha, kappa);
    gap_sum += gap;
    gap_max = std::max(gap_max, gap);
  }
  note(2, "min over instances of f(P*) - max f(random) = %.3g", worst_margin);
  note(2, "max projected gradient norm at P* = %.3g", worst_grad);
  note(2, "objective gap of the additive rule vs P*: mean %.4g, max %.4g", gap_sum / instances, gap_max);
  Outcome out;
  out.pass = failures == 0;
  std::ostringstream os;
  os << failures << " failing instances; worst margin " << worst_margin << ", worst gradient " << worst_grad
     << "; additive-rule gap mean " << gap_sum / instances;
  out.detail = os.str();
  return out;
}

// ---------------------------------------------------------------------------
// C3

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-5); }

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

std::vector<double> fd_gradient(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f,
                                double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Mat random_mat(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -scale, scale);
  return m;
}

// True when some hidden ReLU input lies within `margin` of its kink, where a
// finite difference with a smaller step would straddle the corner.
bool near_kink(const Mlp& net, const Mat& x, double margin) {
  MlpCache cache;
  net.forward(x, &cache);
  for (std::size_t l = 0; l + 1 < cache.preacts.size(); ++l) {
    if ((cache.preacts[l].array().abs() < margin).any()) return true;
  }
  return false;
}

Outcome c3_gradients() {
  const int seeds = 20;
  const double h = 1e-5;
  double worst[4] = {0.0, 0.0, 0.0, 0.0};
  for (int seed = 0; seed < seeds; ++seed) {
    Rng rng(derive_seed(0xC3, static_cast<std::uint64_t>(seed)));
    for (int i = 0; i < 50; ++i) {
      ExpectileConfig ec{uniform(rng, 0.05, 0.95)};
      double u = uniform(rng, -3.0, 3.0);
      if (std::abs(u) < 1e-3) u += 0.01;
      const double fd = (expectile_loss(u + h, ec).loss - expectile_loss(u - h, ec).loss) / (2 * h);
      worst[0] = std::max(worst[0], rel_err(expectile_loss(u, ec).grad, fd));

      HuberConfig hc{uniform(rng, 0.2, 3.0)};
      double x = uniform(rng, -5.0, 5.0);
      if (std::abs(std::abs(x) - hc.delta) < 1e-3) x += 0.01;
      const double fdh = (huber_loss(x + h, hc).loss - huber_loss(x - h, hc).loss) / (2 * h);
      worst[1] = std::max(worst[1], rel_err(huber_loss(x, hc).grad, fdh));
    }

    // Gaussian log-density through the tanh head and the network.
    GaussianPolicy pi(4, ActionBounds::symmetric(2, 1.0), {16, 16}, rng, uniform(rng, -1.0, 0.0));
    std::vector<double> params = pi.flat_params();
    for (double& v : params) v += uniform(rng, -0.3, 0.3);
    pi.set_flat_params(params);
    Mat s = random_mat(4, 9, rng, 1.0);
    while (near_kink(pi.net(), s, 1e-3)) s = random_mat(4, 9, rng, 1.0);
    const Mat a = random_mat(2, 9, rng, 0.9);
    Vec w(9);
    for (Eigen::Index j = 0; j < 9; ++j) w(j) = uniform(rng, 0.1, 3.0);
    GaussianPolicy::Grads pg;
    pi.weighted_nll(s, a, w, &pg);
    auto nll = [&](const std::vector<double>& v) {
      GaussianPolicy c = pi;
      c.set_flat_params(v);
      return c.weighted_nll(s, a, w);
    };
    worst[2] = std::max(worst[2], max_rel(pg.flatten(), fd_gradient(pi.flat_params(), nll, h)));

    // Full MLP backprop, parameters and inputs.
    Mlp net({6, 32, 32, 3}, rng);
    Mat x = random_mat(6, 8, rng, 1.0);
    while (near_kink(net, x, 1e-3)) x = random_mat(6, 8, rng, 1.0);
    const Mat up = random_mat(3, 8, rng, 1.0);
    MlpCache cache;
    net.forward(x, &cache);
    const MlpGrads g = net.backward(cache, up);
    const auto widths = net.widths();
    auto fp = [&](const std::vector<double>& v) {
      return (Mlp::from_params(widths, v).forward(x).array() * up.array()).sum();
    };
    worst[3] = std::max(worst[3], max_rel(g.flatten(), fd_gradient(net.flat_params(), fp, h)));
    std::vector<double> xin(x.data(), x.data() + x.size());
    auto fx = [&](const std::vector<double>& v) {
      return (net.forward(Mat(Eigen::Map<const Mat>(v.data(), 6, 8))).array() * up.array()).sum();
    };
    const std::vector<double> gin(g.input.data(), g.input.data() + g.input.size());
    worst[3] = std::max(worst[3], max_rel(gin, fd_gradient(xin, fx, h)));
  }
  note(3, "max relative error: expectile %.3g, huber %.3g, gaussian nll %.3g, mlp %.3g", worst[0], worst[1],
       worst[2], worst[3]);
  Outcome out;
  out.pass = *std::max_element(worst, worst + 4) < 1e-4;
  std::ostringstream os;
  os << "worst relative error " << *std::max_element(worst, worst + 4) << " over " << seeds << " seeds";
  out.detail = os.str();
  return out;
}

// ---------------------------------------------------------------------------
// C4

Outcome c4_corruption_statistics() {
  bool ok = true;
  std::ostringstream os;
  const PointMass env;
  const TransitionDataset ds = collect_dataset(env, BehaviorSpec{0.5}, 10000, 0xC4);
  int cases = 0, good = 0;
  for (CorruptElement e : {CorruptElement::observation, CorruptElement::action, CorruptElement::reward,
                           CorruptElement::dynamics, CorruptElement::mixed}) {
    for (double c1 : {0.1, 0.3, 0.5, 1.0}) {
      CorruptionSpec spec;
      spec.element = e;
      spec.offline_rate = c1;
      spec.offline_scale = 1.0;
      spec.fill_std(ds, true);
      Rng rng(derive_seed(0xC4, static_cast<std::uint64_t>(cases)));
      const CorruptedDataset cd = corrupt_dataset(ds, spec, rng);
      const auto want = static_cast<std::size_t>(std::llround(c1 * static_cast<double>(ds.size())));
      const std::size_t marked = static_cast<std::size_t>(std::count(cd.mask.begin(), cd.mask.end(), true));
      const CorruptionReport rep = validate_corruption(ds, cd.data, spec);
      ++cases;
      if (marked == want && cd.indices.size() == want && rep.ok()) {
        ++good;
      } else {
        note(4, "%s c1=%.1f: marked %zu, want %zu, %s", to_string(e).c_str(), c1, marked, want,
             rep.summary().c_str());
      }
    }
  }
  note(4, "offline count/bound/untouched checks: %d/%d cases", good, cases);
  ok = ok && good == cases;

  // Reward noise moments at N = 1e5.
  const TransitionDataset big = collect_dataset(env, BehaviorSpec{0.5}, 100000, 0xC4 + 1);
  CorruptionSpec rs;
  rs.element = CorruptElement::reward;
  rs.offline_rate = 1.0;
  rs.offline_scale = 1.0;
  Rng rr(0xC4 + 2);
  const CorruptedDataset rc = corrupt_dataset(big, rs, rr);
  double sum = 0.0, lo = INFINITY, hi = -INFINITY;
  for (const auto& t : rc.data.records) {
    sum += t.r;
    lo = std::min(lo, t.r);
    hi = std::max(hi, t.r);
  }
  const double reward_mean = sum / static_cast<double>(rc.data.size());
  note(4, "reward attack N=%zu: mean %.4f, range [%.4f, %.4f]", rc.data.size(), reward_mean, lo, hi);
  ok = ok && std::abs(reward_mean) <= 0.5 && lo >= -30.0 && hi <= 30.0;

  // Online corrupted fraction.
  const int n_online = 100000;
  for (double c2 : {0.1, 0.5}) {
    for (CorruptElement e : {CorruptElement::reward, CorruptElement::observation, CorruptElement::mixed}) {
      CorruptionSpec os_spec;
      os_spec.element = e;
      os_spec.online_rate = c2;
      os_spec.online_scale = 1.0;
      os_spec.fill_std(ds, true);
      Rng rng(derive_seed(0xC4 + 3, static_cast<std::uint64_t>(c2 * 10) * 7 + static_cast<std::uint64_t>(e)));
      int hit = 0;
      for (int i = 0; i < n_online; ++i) {
        const Transition& t = ds.records[static_cast<std::size_t>(i) % ds.size()];
        const CorruptionOutcome o = corrupt_transition(t, os_spec, rng, nullptr);
        hit += o.corrupted ? 1 : 0;
      }
      const double sd = std::sqrt(n_online * c2 * (1.0 - c2));
      const double z = (hit - n_online * c2) / sd;
      note(4, "online %s c2=%.1f: %d/%d corrupted, z = %.3f", to_string(e).c_str(), c2, hit, n_online, z);
      ok = ok && std::abs(z) <= 3.0;
    }
  }
  os << good << "/" << cases << " offline cases exact; reward mean " << reward_mean;
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// C5

Outcome c5_adversarial_contract() {
  const PointMass env;
  const TransitionDataset ds = collect_dataset(env, BehaviorSpec{0.5}, 5000, 0xC5);
  AgentConfig oc = AgentConfig::iql();
  oc.hidden = {64, 64};
  oc.ensemble_size = 2;
  oc.offline_steps = 2000;
  oc.mix.batch_size = 128;
  const AttackOracle oracle = train_attack_oracle(ds, oc, env.action_bounds(), 0xC5);

  CorruptionSpec spec;
  spec.element = CorruptElement::dynamics;
  spec.mode = CorruptMode::adversarial;
  spec.online_rate = 1.0;
  spec.online_scale = 1.0;
  // Raw-space scales so the box is not trivially the unit cube.
  spec.fill_std(ds, false);

  const int attacks = 1000;
  Rng rng(0xC5C5);
  int descended = 0, box_violations = 0, skipped = 0, value_mismatch = 0;
  for (int i = 0; i < attacks; ++i) {
    const Transition& t = ds.records[uniform_index(rng, ds.size())];
    Rng replay = rng;
    AttackResult res;
    try {
      res = adversarial_dynamics(t, oracle, spec, rng);
    } catch (const AttackSkipped&) {
      ++skipped;
      continue;
    }
    // The starting point is the first d uniform draws of the attack stream.
    Mat x0(static_cast<Eigen::Index>(t.s2.size()), 1), x1(x0.rows(), 1);
    for (std::size_t d = 0; d < t.s2.size(); ++d) {
      const double z0 = uniform(replay, -spec.online_scale, spec.online_scale);
      const double sd = spec.std_next_state[d];
      x0(static_cast<Eigen::Index>(d), 0) = t.s2[d] + z0 * sd;
      x1(static_cast<Eigen::Index>(d), 0) = res.transition.s2[d];
      const double low = t.s2[d] + (-spec.online_scale) * sd;
      const double high = t.s2[d] + spec.online_scale * sd;
      if (!(res.transition.s2[d] >= low && res.transition.s2[d] <= high)) ++box_violations;
    }
    const double q0 = oracle.q_and_grad(x0, nullptr)(0);
    const double q1 = oracle.q_and_grad(x1, nullptr)(0);
    if (q0 != res.q_start || q1 != res.q_final) ++value_mismatch;
    if (q1 <= q0) ++descended;
    if (res.transition.s != t.s || res.transition.a != t.a || res.transition.r != t.r ||
        res.transition.done != t.done) {
      ++box_violations;
    }
  }
  note(5, "%d attacks: %d descended, %d box violations, %d skipped, %d reported-value mismatches", attacks,
       descended, box_violations, skipped, value_mismatch);
  Outcome out;
  out.pass = box_violations == 0 && value_mismatch == 0 && descended >= 950;
  std::ostringstream os;
  os << descended << "/" << attacks << " attacks lowered Q; " << box_violations << " box violations";
  out.detail = os.str();
  return out;
}

// ---------------------------------------------------------------------------
// Desk-scale settings shared by C6..C8.

constexpr int kSeeds = 5;

AgentConfig desk_agent(bool riql) {
  AgentConfig cfg = riql ? AgentConfig::riql() : AgentConfig::iql();
  cfg.hidden = {64, 64};
  cfg.mix.batch_size = 128;
  return cfg;
}

// ---------------------------------------------------------------------------
// C6

struct MazeRun {
  std::vector<double> len_rpex, len_pex;
  std::vector<bool> goal_rpex, goal_pex;
};

Outcome c6_maze_trajectories() {
  const GridMaze maze;
  const int shortest = maze.distance_to_goal(maze.layout().start);
  const double cap = 1.5 * shortest;
  AgentConfig cfg = desk_agent(false);
  cfg.offline_steps = 6000;
  MazeRun clean, corrupt;
  for (int s = 0; s < kSeeds; ++s) {
    const std::uint64_t seed = derive_seed(0xC6, static_cast<std::uint64_t>(s));
    const TransitionDataset ds = collect_dataset(maze, BehaviorSpec{0.5}, 5000, derive_seed(seed, 1));
    CorruptionSpec spec;
    spec.element = CorruptElement::observation;
    spec.offline_rate = 0.5;
    spec.offline_scale = 1.0;
    spec.fill_std(ds, cfg.normalize_states);
    Rng crng(derive_seed(seed, 2));
    const TransitionDataset noisy = corrupt_dataset(ds, spec, crng).data;
    for (bool corrupted : {false, true}) {
      const TransitionDataset& data = corrupted ? noisy : ds;
      const OfflineArtifacts base = offline_train(data, cfg, maze.action_bounds(), derive_seed(seed, 3));
      MazeRun& run = corrupted ? corrupt : clean;
      for (SelectionRule rule : {SelectionRule::rpex, SelectionRule::pex}) {
        OfflineArtifacts art = base;
        art.cfg.selection_rule = rule;
        const OnlineAgent agent(art, data, derive_seed(seed, 4));
        const Trajectory tr = greedy_trajectory(agent, maze, 1000, derive_seed(seed, 5));
        (rule == SelectionRule::rpex ? run.len_rpex : run.len_pex).push_back(static_cast<double>(tr.length()));
        (rule == SelectionRule::rpex ? run.goal_rpex : run.goal_pex).push_back(tr.reached_goal);
      }
      note(6, "seed %d %s: rpex length %.0f%s, pex length %.0f%s", s, corrupted ? "corrupted" : "clean",
           run.len_rpex.back(), run.goal_rpex.back() ? "" : " (no goal)", run.len_pex.back(),
           run.goal_pex.back() ? "" : " (no goal)");
    }
  }
  bool clean_ok = true;
  for (int s = 0; s < kSeeds; ++s) {
    clean_ok = clean_ok && clean.goal_rpex[s] && clean.goal_pex[s] && clean.len_rpex[s] <= cap &&
               clean.len_pex[s] <= cap;
  }
  const double r = mean_of(corrupt.len_rpex), p = mean_of(corrupt.len_pex);
  note(6, "shortest path %d, cap %.1f; corrupted mean length rpex %.2f, pex %.2f", shortest, cap, r, p);
  Outcome out;
  out.pass = clean_ok && r <= p;
  std::ostringstream os;
  os << "corrupted mean length rpex " << r << " vs pex " << p << "; clean runs within cap: "
     << (clean_ok ? "yes" : "no");
  out.detail = os.str();
  return out;
}

// ---------------------------------------------------------------------------
// C7

Outcome c7_kurtosis_direction() {
  const PointMass env;
  AgentConfig cfg = desk_agent(false);
  cfg.offline_steps = 6000;
  std::vector<double> clean_k, corrupt_k;
  for (int s = 0; s < kSeeds; ++s) {
    const std::uint64_t seed = derive_seed(0xC7, static_cast<std::uint64_t>(s));
    const TransitionDataset ds = collect_dataset(env, BehaviorSpec{0.5}, 20000, derive_seed(seed, 1));
    CorruptionSpec spec;
    spec.element = CorruptElement::reward;
    spec.offline_rate = 0.3;
    spec.offline_scale = 1.0;
    spec.fill_std(ds, cfg.normalize_states);
    Rng crng(derive_seed(seed, 2));
    const TransitionDataset noisy = corrupt_dataset(ds, spec, crng).data;
    for (bool corrupted : {false, true}) {
      const TransitionDataset& data = corrupted ? noisy : ds;
      const OfflineArtifacts art = offline_train(data, cfg, env.action_bounds(), derive_seed(seed, 3));
      const StateNormalizer norm(art.norm);
      std::vector<Vec> states;
      for (const auto& t : data.records) states.push_back(norm.apply(t.s));
      Rng krng(derive_seed(seed, 4));
      const KurtosisReport rep = policy_kurtosis(art.beta.gaussian, states, 5000, krng);
      const double k = rep.mean.value_or(NAN);
      (corrupted ? corrupt_k : clean_k).push_back(k);
    }
    note(7, "seed %d: clean kurtosis %.4f, corrupted %.4f", s, clean_k.back(), corrupt_k.back());
  }
  const double c = mean_of(clean_k), r = mean_of(corrupt_k);
  note(7, "mean over %d seeds: clean %.4f, corrupted %.4f", kSeeds, c, r);
  Outcome out;
  out.pass = std::isfinite(c) && std::isfinite(r) && r > c;
  std::ostringstream os;
  os << "corrupted " << r << " vs clean " << c;
  out.detail = os.str();
  return out;
}

// ---------------------------------------------------------------------------
// C8

Outcome c8_reward_fine_tuning() {
  const PointMass env;
  AgentConfig cfg = desk_agent(true);
  cfg.offline_steps = 20000;
  cfg.online_steps = 10000;
  cfg.initial_collection = 2000;
  cfg.eval_interval = 1000;
  cfg.eval_episodes = 10;
  std::vector<double> final_rpex, final_pex;
  for (int s = 0; s < kSeeds; ++s) {
    const std::uint64_t seed = derive_seed(0xC8, static_cast<std::uint64_t>(s));
    const TransitionDataset ds = collect_dataset(env, BehaviorSpec{0.5}, 20000, derive_seed(seed, 1));
    CorruptionSpec spec;
    spec.element = CorruptElement::reward;
    spec.offline_rate = 0.3;
    spec.online_rate = 0.5;
    spec.offline_scale = 1.0;
    spec.online_scale = 1.0;
    spec.fill_std(ds, cfg.normalize_states);
    Rng crng(derive_seed(seed, 2));
    const TransitionDataset noisy = corrupt_dataset(ds, spec, crng).data;
    const OfflineArtifacts base = offline_train(noisy, cfg, env.action_bounds(), derive_seed(seed, 3));
    for (SelectionRule rule : {SelectionRule::rpex, SelectionRule::pex}) {
      OfflineArtifacts art = base;
      art.cfg.selection_rule = rule;
      OnlineAgent agent(art, noisy, derive_seed(seed, 4));
      Rng rng(derive_seed(seed, 5));
      const std::vector<EvalPoint> evals = agent.online_train(env, spec, nullptr, rng);
      for (const auto& e : evals) {
        if (e.returns.size() != 10u) return {false, "evaluation without 10 episodes"};
      }
      (rule == SelectionRule::rpex ? final_rpex : final_pex).push_back(final_summary(evals));
    }
    note(8, "seed %d: final return rpex %.3f, pex %.3f", s, final_rpex.back(), final_pex.back());
  }
  const double r = mean_of(final_rpex), p = mean_of(final_pex);
  note(8, "mean over %d seeds: rpex %.3f, pex %.3f", kSeeds, r, p);
  Outcome out;
  out.pass = r >= p;
  std::ostringstream os;
  os << "mean final return rpex " << r << " vs pex " << p;
  out.detail = os.str();
  return out;
}

// ---------------------------------------------------------------------------
// C9

Outcome c9_algorithm_mechanics() {
  const PointMass env;
  const TransitionDataset ds = collect_dataset(env, BehaviorSpec{0.5}, 2000, 0xC9);
  bool ok = true;
  std::ostringstream os;
  for (int m : {1, 4}) {
    AgentConfig cfg = AgentConfig::iql();
    cfg.hidden = {32, 32};
    cfg.mix.batch_size = 256;
    cfg.mix.offline_ratio = 0.5;
    cfg.utd = m;
    cfg.offline_steps = 50;
    cfg.initial_collection = 300;
    cfg.online_steps = 100;
    cfg.eval_interval = 50;
    cfg.eval_episodes = 2;
    const OfflineArtifacts art = offline_train(ds, cfg, env.action_bounds(), 0xC9 + static_cast<std::uint64_t>(m));
    OnlineAgent agent(art, ds, 0x9C);
    const std::uint64_t beta_hash = agent.beta().param_hash();
    const std::uint64_t theta_hash = agent.theta().param_hash();
    bool frozen = true;
    Rng rng(0xC99);
    CorruptionSpec spec;
    spec.element = CorruptElement::reward;
    spec.online_rate = 0.5;
    const auto evals = agent.online_train(env, spec, nullptr, rng, [&](const EvalPoint&) {
      frozen = frozen && agent.beta().param_hash() == beta_hash;
    });
    frozen = frozen && agent.beta().param_hash() == beta_hash;
    const TrainCounters& c = agent.counters();
    const bool utd_ok = c.gradient_passes == static_cast<std::uint64_t>(m) * 100 && c.env_steps == 400;
    const bool queries_ok = agent.offline_buffer().queries() == c.gradient_passes &&
                            agent.online_buffer().queries() == c.gradient_passes;
    int split_ok = 0;
    Rng brng(0xC9C9);
    for (int i = 0; i < 100; ++i) {
      const Batch b = mixed_sample(agent.offline_buffer(), agent.online_buffer(), cfg.mix, brng);
      if (b.size() == 256 && b.offline_count() == 128) ++split_ok;
    }
    const bool learned = agent.theta().param_hash() != theta_hash;
    note(9, "M=%d: %llu gradient passes over %llu env steps (%d online), beta frozen %s, theta updated %s, "
            "128/128 split in %d/100 batches, buffer queries %s",
         m, static_cast<unsigned long long>(c.gradient_passes), static_cast<unsigned long long>(c.env_steps),
         cfg.online_steps, frozen ? "yes" : "no", learned ? "yes" : "no", split_ok, queries_ok ? "match" : "differ");
    ok = ok && utd_ok && queries_ok && frozen && learned && split_ok == 100 && evals.size() == 2;
    os << "M=" << m << ": " << c.gradient_passes << " passes; ";
  }
  os << (ok ? "split and freeze hold" : "mechanics violated");
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// C10

Outcome c10_determinism() {
  ExperimentConfig cfg;
  cfg.env_id = "pointmass";
  cfg.dataset_size = 2000;
  cfg.corruption.element = CorruptElement::mixed;
  cfg.corruption.offline_rate = 0.3;
  cfg.corruption.online_rate = 0.5;
  cfg.agent.hidden = {32, 32};
  cfg.agent.mix.batch_size = 64;
  cfg.agent.offline_steps = 200;
  cfg.agent.online_steps = 300;
  cfg.agent.initial_collection = 100;
  cfg.agent.eval_interval = 100;
  cfg.agent.eval_episodes = 3;
  cfg.kurtosis_samples = 500;
  cfg.seeds = {1, 2};
  const fs::path a = scratch("c10_a"), b = scratch("c10_b");
  cfg.out_dir = a.string();
  const EvalReport ra = run_experiment(cfg);
  cfg.out_dir = b.string();
  const EvalReport rb = run_experiment(cfg);
  bool ok = ra.ok() && rb.ok();
  int identical = 0, compared = 0;
  for (std::uint64_t seed : cfg.seeds) {
    const std::string sub = "seed_" + std::to_string(seed);
    for (const char* f : {"metrics.csv", "episodes.csv", "diagnostics.csv", "counters.txt", "corruption_mask.csv",
                          "dataset_corrupted.txt", "offline.ckpt", "online.ckpt"}) {
      ++compared;
      const std::string x = slurp(a / sub / f);
      if (!x.empty() && x == slurp(b / sub / f)) ++identical;
    }
  }
  ++compared;
  if (slurp(a / "summary.csv") == slurp(b / "summary.csv")) ++identical;
  note(10, "rerun: %d/%d artifacts byte-identical", identical, compared);
  ok = ok && identical == compared;

  // Round trips through the file formats.
  const fs::path dir = a / "seed_1";
  const fs::path copy = scratch("c10_copy");
  const Checkpoint off = Checkpoint::load((dir / "offline.ckpt").string());
  off.save((copy / "offline.ckpt").string());
  const Checkpoint on = Checkpoint::load((dir / "online.ckpt").string());
  on.save((copy / "online.ckpt").string());
  const TransitionDataset data = read_dataset((dir / "dataset_corrupted.txt").string());
  write_dataset(data, (copy / "dataset.txt").string());
  const bool ckpt_ok = slurp(dir / "offline.ckpt") == slurp(copy / "offline.ckpt") &&
                       slurp(dir / "online.ckpt") == slurp(copy / "online.ckpt") &&
                       Checkpoint::load((copy / "online.ckpt").string()) == on;
  const bool data_ok = slurp(dir / "dataset_corrupted.txt") == slurp(copy / "dataset.txt") &&
                       read_dataset((copy / "dataset.txt").string()) == data;

  // A reloaded policy reproduces the last evaluation of the run.
  const auto env = make_env(cfg.env_id);
  const CheckpointPolicy policy(on, cfg.agent);
  const OfflineArtifacts reloaded = OfflineArtifacts::from_checkpoint(off, cfg.agent);
  const bool params_ok = Checkpoint::deserialize(reloaded.to_checkpoint().serialize()) == off;
  note(10, "checkpoint round trip %s, dataset round trip %s, offline artifacts re-serialize %s",
       ckpt_ok ? "exact" : "differs", data_ok ? "exact" : "differs", params_ok ? "exact" : "differs");
  ok = ok && ckpt_ok && data_ok && params_ok && policy.has_online_policy();
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(copy);
  std::ostringstream os;
  os << identical << "/" << compared << " rerun artifacts identical; round trips "
     << (ckpt_ok && data_ok && params_ok ? "exact" : "broken");
  return {ok, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "selection-rule exactness", 30, c1_selection_exactness},
      {2, "selection objective maximality", 60, c2_maximality},
      {3, "loss-kernel gradient checks", 60, c3_gradients},
      {4, "corruption statistics", 30, c4_corruption_statistics},
      {5, "adversarial attack contract", 120, c5_adversarial_contract},
      {6, "maze exploration trajectories", 300, c6_maze_trajectories},
      {7, "policy kurtosis direction", 600, c7_kurtosis_direction},
      {8, "reward-corrupted fine-tuning", 900, c8_reward_fine_tuning},
      {9, "online loop mechanics", 60, c9_algorithm_mechanics},
      {10, "determinism and round trips", 120, c10_determinism},
  };
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) {
    try {
      wanted.push_back(std::stoi(argv[i]));
    } catch (const std::exception&) {
      std::fprintf(stderr, "usage: %s [criterion number ...]\n", argv[0]);
      return 2;
    }
  }
  int failed = 0;
  for (const Criterion& c : all) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.limit_s;
    const bool pass = out.pass && in_time;
    if (!pass) ++failed;
    std::printf("C%d %s %s (%.1f s of %.0f s): %s%s\n", c.id, pass ? "PASS" : "FAIL", c.title, secs, c.limit_s,
                out.detail.c_str(), in_time ? "" : " [over time limit]");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
