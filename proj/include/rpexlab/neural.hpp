#pragma once

// Small fully connected networks with hand-written backpropagation, Adam,
// Polyak target tracking, and the policy/value/critic heads built on them.
//
// Batches are column-major: an input matrix has one sample per column.

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rpexlab/rng.hpp"

namespace rpexlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
};

struct OptimConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Polyak rate for target networks.
  double polyak = 5e-3;
  void validate() const;
};

struct DenseLayer {
  Mat weight;  // out x in
  Vec bias;    // out
};

/// Activations saved by a forward pass.
struct MlpCache {
  std::uint64_t net_id = 0;
  std::uint64_t generation = 0;
  std::vector<Mat> inputs;       // input to each layer
  std::vector<Mat> preacts;      // pre-activation output of each layer
};

struct MlpGrads {
  std::vector<Mat> weight;
  std::vector<Vec> bias;
  /// Gradient with respect to the network input (one column per sample).
  Mat input;

  void scale(double factor);
  void add(const MlpGrads& other);
  bool all_finite() const;
  /// Same order as Mlp::flat_params.
  std::vector<double> flatten() const;
};

namespace detail {
struct InstanceId {
  static std::uint64_t next() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }
  std::uint64_t value = next();
  InstanceId() = default;
  InstanceId(const InstanceId&) : value(next()) {}
  InstanceId& operator=(const InstanceId&) {
    value = next();
    return *this;
  }
};
}  // namespace detail

/// Multilayer perceptron: ReLU hidden layers, linear output.
class Mlp {
 public:
  Mlp() = default;
  /// widths = {input, hidden..., output}. Weights and biases are drawn from
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)); the last layer is multiplied by
  /// final_scale.
  Mlp(std::vector<int> widths, Rng& rng, double final_scale = 1.0);
  /// Rebuilds a network from its widths and flat parameters.
  static Mlp from_params(std::vector<int> widths, std::span<const double> params);

  const std::vector<int>& widths() const { return widths_; }
  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  std::size_t num_layers() const { return layers_.size(); }
  const DenseLayer& layer(std::size_t i) const { return layers_[i]; }

  Mat forward(const Mat& input, MlpCache* cache = nullptr) const;
  Vec forward(const Vec& input) const;

  /// Gradients of sum(output .* upstream) with respect to every parameter
  /// and the input. Throws if the cache predates a parameter change.
  MlpGrads backward(const MlpCache& cache, const Mat& upstream) const;

  /// One Adam step with bias correction. Throws NonFiniteError and leaves
  /// the network untouched when any gradient is non-finite.
  void adam_step(const MlpGrads& grads, const OptimConfig& cfg);
  std::uint64_t adam_steps() const { return adam_t_; }

  std::size_t num_params() const;
  /// Per layer: weight row-major, then bias.
  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> params);
  bool params_finite() const;
  /// FNV-1a over the raw parameter bytes.
  std::uint64_t param_hash() const;

  friend void polyak_update(Mlp& target, const Mlp& online, double rho);

 private:
  void touch() { ++generation_; }
  void check_grads_shape(const MlpGrads& grads) const;

  std::vector<int> widths_;
  std::vector<DenseLayer> layers_;
  std::vector<Mat> m_w_, v_w_;
  std::vector<Vec> m_b_, v_b_;
  std::uint64_t adam_t_ = 0;
  std::uint64_t generation_ = 0;
  detail::InstanceId id_;
};

/// target <- (1 - rho) target + rho online, elementwise.
void polyak_update(Mlp& target, const Mlp& online, double rho);

/// Adam on a free parameter vector; shares the update rule with Mlp.
struct AdamVector {
  Vec m, v;
  std::uint64_t t = 0;
  void step(Vec& param, const Vec& grad, const OptimConfig& cfg);
};

struct ActionBounds {
  Vec low;
  Vec high;
  static ActionBounds symmetric(int dim, double limit = 1.0);
  int dim() const { return static_cast<int>(low.size()); }
  Vec center() const { return (low + high) / 2.0; }
  Vec half_range() const { return (high - low) / 2.0; }
  Vec clip(const Vec& a) const { return a.cwiseMax(low).cwiseMin(high); }
  bool contains(const Vec& a) const;
};

struct PolicySample {
  Vec action;
  double log_density;
};

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

/// Diagonal Gaussian policy: bounded mean head plus a state-independent
/// log-std vector clamped to [kLogStdMin, kLogStdMax].
class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(int state_dim, ActionBounds bounds, const std::vector<int>& hidden, Rng& rng,
                 double init_log_std = 0.0);
  GaussianPolicy(Mlp net, Vec log_std, ActionBounds bounds);

  int state_dim() const { return net_.input_dim(); }
  int action_dim() const { return net_.output_dim(); }
  const ActionBounds& bounds() const { return bounds_; }
  const Mlp& net() const { return net_; }
  const Vec& log_std() const { return log_std_; }
  void set_log_std(const Vec& log_std);

  Mat mean(const Mat& states) const;
  Vec mode(const Vec& state) const;
  /// Samples mean + sigma z, clips to bounds, and reports the Gaussian
  /// log-density at the emitted action.
  PolicySample sample(const Vec& state, Rng& rng) const;
  double log_density(const Vec& state, const Vec& action) const;
  Vec log_density(const Mat& states, const Mat& actions) const;
  /// Gaussian log-density of an action given a precomputed mean.
  double log_density_at(const Vec& mean, const Vec& action) const;

  /// Loss = -mean_b(w_b log pi(a_b | s_b)); fills grads when non-null.
  struct Grads {
    MlpGrads net;
    Vec log_std;
    std::vector<double> flatten() const;
  };
  double weighted_nll(const Mat& states, const Mat& actions, const Vec& weights,
                      Grads* grads = nullptr) const;
  void apply(const Grads& grads, const OptimConfig& cfg);

  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> params);
  std::uint64_t param_hash() const;

 private:
  Mlp net_;
  Vec log_std_;
  ActionBounds bounds_;
  AdamVector log_std_opt_;
};

/// Bounded deterministic policy.
class DeterministicPolicy {
 public:
  DeterministicPolicy() = default;
  DeterministicPolicy(int state_dim, ActionBounds bounds, const std::vector<int>& hidden,
                      Rng& rng);
  DeterministicPolicy(Mlp net, ActionBounds bounds);

  int state_dim() const { return net_.input_dim(); }
  int action_dim() const { return net_.output_dim(); }
  const ActionBounds& bounds() const { return bounds_; }
  const Mlp& net() const { return net_; }

  Mat act(const Mat& states, MlpCache* cache = nullptr) const;
  Vec act(const Vec& state) const;

  /// Loss = mean_b(w_b ||pi(s_b) - a_b||^2).
  double weighted_mse(const Mat& states, const Mat& actions, const Vec& weights,
                      MlpGrads* grads = nullptr) const;
  void apply(const MlpGrads& grads, const OptimConfig& cfg) { net_.adam_step(grads, cfg); }

  /// Gradient of sum_b <upstream_b, pi(s_b)> with respect to the states.
  Mat input_gradient(const Mat& states, const Mat& upstream) const;

  std::uint64_t param_hash() const { return net_.param_hash(); }

 private:
  Mlp net_;
  ActionBounds bounds_;
};

class ValueNet {
 public:
  ValueNet() = default;
  ValueNet(int state_dim, const std::vector<int>& hidden, Rng& rng);
  explicit ValueNet(Mlp net) : net_(std::move(net)) {}

  Vec values(const Mat& states, MlpCache* cache = nullptr) const;
  double value(const Vec& state) const;
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

 private:
  Mlp net_;
};

/// N independent Q networks over the concatenated (state, action) input,
/// their target copies, and the quantile level used to aggregate them.
class CriticEnsemble {
 public:
  CriticEnsemble() = default;
  CriticEnsemble(int state_dim, int action_dim, int size, const std::vector<int>& hidden,
                 double quantile_level, Rng& rng);
  CriticEnsemble(int state_dim, std::vector<Mlp> online, std::vector<Mlp> targets,
                 double quantile_level);

  int size() const { return static_cast<int>(online_.size()); }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  double quantile_level() const { return quantile_level_; }

  static Mat stack_inputs(const Mat& states, const Mat& actions);

  /// size x batch matrix of Q predictions.
  Mat q_all(const Mat& states, const Mat& actions, bool target) const;
  /// Per-sample quantile across members (the plain value when size == 1).
  Vec q_aggregate(const Mat& states, const Mat& actions, bool target) const;
  double q_aggregate(const Vec& state, const Vec& action, bool target) const;
  /// Member-mean Q and its gradient with respect to the state and action
  /// inputs, evaluated on the target networks.
  Vec mean_q_with_input_grad(const Mat& states, const Mat& actions, Mat* d_states,
                             Mat* d_actions) const;

  Mlp& member(int i) { return online_[static_cast<std::size_t>(i)]; }
  const Mlp& member(int i) const { return online_[static_cast<std::size_t>(i)]; }
  Mlp& target(int i) { return targets_[static_cast<std::size_t>(i)]; }
  const Mlp& target(int i) const { return targets_[static_cast<std::size_t>(i)]; }

  void update_targets(double rho);

 private:
  int state_dim_ = 0;
  int action_dim_ = 0;
  double quantile_level_ = 0.25;
  std::vector<Mlp> online_;
  std::vector<Mlp> targets_;
};

}  // namespace rpexlab
