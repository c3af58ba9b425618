#include "rpexlab/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "rpexlab/core_math.hpp"

namespace rpexlab {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001B3ULL;
  }
}

template <typename Derived>
bool finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

// d/draw of center + half * tanh(raw).
Mat tanh_head_jacobian(const Mat& raw, const Vec& half) {
  Mat t = raw.array().tanh().matrix();
  Mat out = (1.0 - t.array().square()).matrix();
  for (Eigen::Index c = 0; c < out.cols(); ++c) out.col(c).array() *= half.array();
  return out;
}

Mat tanh_head(const Mat& raw, const ActionBounds& bounds) {
  Mat out = raw.array().tanh().matrix();
  const Vec half = bounds.half_range();
  const Vec center = bounds.center();
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    out.col(c) = center + half.cwiseProduct(out.col(c));
  }
  return out;
}

std::vector<int> with_ends(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> widths;
  widths.reserve(hidden.size() + 2);
  widths.push_back(in);
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(out);
  return widths;
}

}  // namespace

void OptimConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(polyak > 0.0 && polyak <= 1.0)) throw std::invalid_argument("polyak rate must lie in (0,1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("adam betas must lie in [0,1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("adam epsilon must be positive");
}

// ---------------------------------------------------------------------------
// MlpGrads

void MlpGrads::scale(double factor) {
  for (auto& w : weight) w *= factor;
  for (auto& b : bias) b *= factor;
  input *= factor;
}

void MlpGrads::add(const MlpGrads& other) {
  if (other.weight.size() != weight.size()) throw std::invalid_argument("MlpGrads::add: shape mismatch");
  for (std::size_t i = 0; i < weight.size(); ++i) {
    weight[i] += other.weight[i];
    bias[i] += other.bias[i];
  }
  if (input.size() == other.input.size()) input += other.input;
}

bool MlpGrads::all_finite() const {
  for (const auto& w : weight) {
    if (!finite(w)) return false;
  }
  for (const auto& b : bias) {
    if (!finite(b)) return false;
  }
  return true;
}

std::vector<double> MlpGrads::flatten() const {
  std::vector<double> out;
  for (std::size_t l = 0; l < weight.size(); ++l) {
    for (Eigen::Index r = 0; r < weight[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < weight[l].cols(); ++c) out.push_back(weight[l](r, c));
    }
    for (Eigen::Index r = 0; r < bias[l].size(); ++r) out.push_back(bias[l](r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mlp

Mlp::Mlp(std::vector<int> widths, Rng& rng, double final_scale) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw std::invalid_argument("Mlp needs at least input and output widths");
  for (int w : widths_) {
    if (w <= 0) throw std::invalid_argument("Mlp widths must be positive");
  }
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const int in = widths_[l];
    const int out = widths_[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    const double scale = (l + 2 == widths_.size()) ? final_scale : 1.0;
    DenseLayer layer{Mat(out, in), Vec(out)};
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) layer.weight(r, c) = scale * uniform(rng, -bound, bound);
    }
    for (int r = 0; r < out; ++r) layer.bias(r) = scale * uniform(rng, -bound, bound);
    layers_.push_back(std::move(layer));
    m_w_.push_back(Mat::Zero(out, in));
    v_w_.push_back(Mat::Zero(out, in));
    m_b_.push_back(Vec::Zero(out));
    v_b_.push_back(Vec::Zero(out));
  }
}

Mlp Mlp::from_params(std::vector<int> widths, std::span<const double> params) {
  Rng scratch(0);
  Mlp net(std::move(widths), scratch);
  net.set_flat_params(params);
  return net;
}

Mat Mlp::forward(const Mat& input, MlpCache* cache) const {
  if (input.rows() != input_dim()) throw std::invalid_argument("Mlp::forward: input dimension mismatch");
  if (cache != nullptr) {
    cache->net_id = id_.value;
    cache->generation = generation_;
    cache->inputs.resize(layers_.size());
    cache->preacts.resize(layers_.size());
  }
  Mat x = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Mat z = layers_[l].weight * x;
    z.colwise() += layers_[l].bias;
    if (cache != nullptr) {
      cache->inputs[l] = std::move(x);
      cache->preacts[l] = z;
    }
    x = (l + 1 < layers_.size()) ? Mat(z.cwiseMax(0.0)) : std::move(z);
  }
  return x;
}

Vec Mlp::forward(const Vec& input) const {
  const Mat out = forward(Mat(input));
  return out.col(0);
}

MlpGrads Mlp::backward(const MlpCache& cache, const Mat& upstream) const {
  if (cache.net_id != id_.value) throw std::logic_error("Mlp::backward: cache belongs to another network");
  if (cache.generation != generation_) throw std::logic_error("Mlp::backward: stale cache");
  if (cache.inputs.size() != layers_.size()) throw std::logic_error("Mlp::backward: incomplete cache");
  if (upstream.rows() != output_dim() || upstream.cols() != cache.inputs.front().cols()) {
    throw std::invalid_argument("Mlp::backward: upstream shape mismatch");
  }
  MlpGrads grads;
  grads.weight.resize(layers_.size());
  grads.bias.resize(layers_.size());
  Mat delta = upstream;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (i + 1 < layers_.size()) {
      delta = delta.cwiseProduct((cache.preacts[i].array() > 0.0).cast<double>().matrix());
    }
    grads.weight[i].noalias() = delta * cache.inputs[i].transpose();
    grads.bias[i] = delta.rowwise().sum();
    delta = layers_[i].weight.transpose() * delta;
  }
  grads.input = std::move(delta);
  return grads;
}

void Mlp::check_grads_shape(const MlpGrads& grads) const {
  if (grads.weight.size() != layers_.size() || grads.bias.size() != layers_.size()) {
    throw std::invalid_argument("gradient shape mismatch");
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (grads.weight[l].rows() != layers_[l].weight.rows() ||
        grads.weight[l].cols() != layers_[l].weight.cols() ||
        grads.bias[l].size() != layers_[l].bias.size()) {
      throw std::invalid_argument("gradient shape mismatch");
    }
  }
}

void Mlp::adam_step(const MlpGrads& grads, const OptimConfig& cfg) {
  check_grads_shape(grads);
  if (!grads.all_finite()) throw NonFiniteError("non-finite gradient; Adam step skipped");
  ++adam_t_;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam_t_));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam_t_));
  const double step = cfg.lr / c1;
  const double inv_sqrt_c2 = 1.0 / std::sqrt(c2);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    m_w_[l] = cfg.beta1 * m_w_[l] + (1.0 - cfg.beta1) * grads.weight[l];
    v_w_[l] = cfg.beta2 * v_w_[l] + (1.0 - cfg.beta2) * grads.weight[l].cwiseAbs2();
    layers_[l].weight.array() -=
        step * m_w_[l].array() / (v_w_[l].array().sqrt() * inv_sqrt_c2 + cfg.eps);
    m_b_[l] = cfg.beta1 * m_b_[l] + (1.0 - cfg.beta1) * grads.bias[l];
    v_b_[l] = cfg.beta2 * v_b_[l] + (1.0 - cfg.beta2) * grads.bias[l].cwiseAbs2();
    layers_[l].bias.array() -=
        step * m_b_[l].array() / (v_b_[l].array().sqrt() * inv_sqrt_c2 + cfg.eps);
  }
  touch();
}

std::size_t Mlp::num_params() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
  return n;
}

std::vector<double> Mlp::flat_params() const {
  std::vector<double> out;
  out.reserve(num_params());
  for (const auto& layer : layers_) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) out.push_back(layer.weight(r, c));
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) out.push_back(layer.bias(r));
  }
  return out;
}

void Mlp::set_flat_params(std::span<const double> params) {
  if (params.size() != num_params()) throw std::invalid_argument("set_flat_params: size mismatch");
  std::size_t k = 0;
  for (auto& layer : layers_) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = params[k++];
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = params[k++];
  }
  touch();
}

bool Mlp::params_finite() const {
  for (const auto& layer : layers_) {
    if (!finite(layer.weight) || !finite(layer.bias)) return false;
  }
  return true;
}

std::uint64_t Mlp::param_hash() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& layer : layers_) {
    fnv_mix(h, layer.weight.data(), sizeof(double) * static_cast<std::size_t>(layer.weight.size()));
    fnv_mix(h, layer.bias.data(), sizeof(double) * static_cast<std::size_t>(layer.bias.size()));
  }
  return h;
}

void polyak_update(Mlp& target, const Mlp& online, double rho) {
  if (target.widths_ != online.widths_) throw std::invalid_argument("polyak_update: architecture mismatch");
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("polyak_update: rho must lie in [0,1]");
  if (rho == 1.0) {
    for (std::size_t l = 0; l < target.layers_.size(); ++l) {
      target.layers_[l].weight = online.layers_[l].weight;
      target.layers_[l].bias = online.layers_[l].bias;
    }
  } else {
    for (std::size_t l = 0; l < target.layers_.size(); ++l) {
      target.layers_[l].weight = (1.0 - rho) * target.layers_[l].weight + rho * online.layers_[l].weight;
      target.layers_[l].bias = (1.0 - rho) * target.layers_[l].bias + rho * online.layers_[l].bias;
    }
  }
  target.touch();
}

void AdamVector::step(Vec& param, const Vec& grad, const OptimConfig& cfg) {
  if (grad.size() != param.size()) throw std::invalid_argument("AdamVector: shape mismatch");
  if (!grad.allFinite()) throw NonFiniteError("non-finite gradient; Adam step skipped");
  if (m.size() != param.size()) {
    m = Vec::Zero(param.size());
    v = Vec::Zero(param.size());
  }
  ++t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  param.array() -= (cfg.lr / c1) * m.array() / (v.array().sqrt() / std::sqrt(c2) + cfg.eps);
}

// ---------------------------------------------------------------------------
// Policies

ActionBounds ActionBounds::symmetric(int dim, double limit) {
  return {Vec::Constant(dim, -limit), Vec::Constant(dim, limit)};
}

bool ActionBounds::contains(const Vec& a) const {
  if (a.size() != low.size()) return false;
  return (a.array() >= low.array()).all() && (a.array() <= high.array()).all();
}

GaussianPolicy::GaussianPolicy(int state_dim, ActionBounds bounds, const std::vector<int>& hidden,
                               Rng& rng, double init_log_std)
    : net_(with_ends(state_dim, hidden, bounds.dim()), rng, 1e-2),
      log_std_(Vec::Constant(bounds.dim(), std::clamp(init_log_std, kLogStdMin, kLogStdMax))),
      bounds_(std::move(bounds)) {}

GaussianPolicy::GaussianPolicy(Mlp net, Vec log_std, ActionBounds bounds)
    : net_(std::move(net)), log_std_(std::move(log_std)), bounds_(std::move(bounds)) {
  if (log_std_.size() != net_.output_dim() || bounds_.dim() != net_.output_dim()) {
    throw std::invalid_argument("GaussianPolicy: dimension mismatch");
  }
  set_log_std(log_std_);
}

void GaussianPolicy::set_log_std(const Vec& log_std) {
  if (log_std.size() != action_dim()) throw std::invalid_argument("set_log_std: dimension mismatch");
  log_std_ = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
}

Mat GaussianPolicy::mean(const Mat& states) const { return tanh_head(net_.forward(states), bounds_); }

Vec GaussianPolicy::mode(const Vec& state) const { return mean(Mat(state)).col(0); }

double GaussianPolicy::log_density_at(const Vec& mean, const Vec& action) const {
  double lp = 0.0;
  for (Eigen::Index d = 0; d < mean.size(); ++d) {
    const double z = (action(d) - mean(d)) * std::exp(-log_std_(d));
    lp += -0.5 * z * z - log_std_(d) - kHalfLog2Pi;
  }
  return lp;
}

PolicySample GaussianPolicy::sample(const Vec& state, Rng& rng) const {
  const Vec mu = mode(state);
  Vec a(mu.size());
  for (Eigen::Index d = 0; d < mu.size(); ++d) a(d) = mu(d) + std::exp(log_std_(d)) * standard_normal(rng);
  a = bounds_.clip(a);
  return {a, log_density_at(mu, a)};
}

double GaussianPolicy::log_density(const Vec& state, const Vec& action) const {
  return log_density_at(mode(state), action);
}

Vec GaussianPolicy::log_density(const Mat& states, const Mat& actions) const {
  const Mat mu = mean(states);
  Vec out(states.cols());
  for (Eigen::Index b = 0; b < states.cols(); ++b) out(b) = log_density_at(mu.col(b), actions.col(b));
  return out;
}

double GaussianPolicy::weighted_nll(const Mat& states, const Mat& actions, const Vec& weights,
                                    Grads* grads) const {
  const Eigen::Index batch = states.cols();
  if (actions.cols() != batch || weights.size() != batch || actions.rows() != action_dim()) {
    throw std::invalid_argument("weighted_nll: batch shape mismatch");
  }
  MlpCache cache;
  const Mat raw = net_.forward(states, grads != nullptr ? &cache : nullptr);
  const Mat mu = tanh_head(raw, bounds_);
  const Vec inv_var = (-2.0 * log_std_).array().exp();
  const double inv_b = 1.0 / static_cast<double>(batch);
  double loss = 0.0;
  Mat d_mu(action_dim(), batch);
  Vec d_log_std = Vec::Zero(action_dim());
  for (Eigen::Index b = 0; b < batch; ++b) {
    double lp = 0.0;
    for (Eigen::Index d = 0; d < action_dim(); ++d) {
      const double diff = actions(d, b) - mu(d, b);
      const double z2 = diff * diff * inv_var(d);
      lp += -0.5 * z2 - log_std_(d) - kHalfLog2Pi;
      d_mu(d, b) = -weights(b) * inv_b * diff * inv_var(d);
      d_log_std(d) += -weights(b) * inv_b * (z2 - 1.0);
    }
    loss -= weights(b) * lp * inv_b;
  }
  if (grads != nullptr) {
    const Mat d_raw = d_mu.cwiseProduct(tanh_head_jacobian(raw, bounds_.half_range()));
    grads->net = net_.backward(cache, d_raw);
    grads->log_std = d_log_std;
  }
  return loss;
}

void GaussianPolicy::apply(const Grads& grads, const OptimConfig& cfg) {
  if (!grads.log_std.allFinite() || !grads.net.all_finite()) {
    throw NonFiniteError("non-finite policy gradient; Adam step skipped");
  }
  net_.adam_step(grads.net, cfg);
  log_std_opt_.step(log_std_, grads.log_std, cfg);
  log_std_ = log_std_.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
}

std::vector<double> GaussianPolicy::Grads::flatten() const {
  std::vector<double> out = net.flatten();
  for (Eigen::Index d = 0; d < log_std.size(); ++d) out.push_back(log_std(d));
  return out;
}

std::vector<double> GaussianPolicy::flat_params() const {
  std::vector<double> out = net_.flat_params();
  for (Eigen::Index d = 0; d < log_std_.size(); ++d) out.push_back(log_std_(d));
  return out;
}

void GaussianPolicy::set_flat_params(std::span<const double> params) {
  const std::size_t n = net_.num_params();
  if (params.size() != n + static_cast<std::size_t>(log_std_.size())) {
    throw std::invalid_argument("GaussianPolicy::set_flat_params: size mismatch");
  }
  net_.set_flat_params(params.subspan(0, n));
  Vec ls(log_std_.size());
  for (Eigen::Index d = 0; d < ls.size(); ++d) ls(d) = params[n + static_cast<std::size_t>(d)];
  set_log_std(ls);
}

std::uint64_t GaussianPolicy::param_hash() const {
  std::uint64_t h = net_.param_hash();
  fnv_mix(h, log_std_.data(), sizeof(double) * static_cast<std::size_t>(log_std_.size()));
  return h;
}

DeterministicPolicy::DeterministicPolicy(int state_dim, ActionBounds bounds,
                                         const std::vector<int>& hidden, Rng& rng)
    : net_(with_ends(state_dim, hidden, bounds.dim()), rng, 1e-2), bounds_(std::move(bounds)) {}

DeterministicPolicy::DeterministicPolicy(Mlp net, ActionBounds bounds)
    : net_(std::move(net)), bounds_(std::move(bounds)) {
  if (bounds_.dim() != net_.output_dim()) throw std::invalid_argument("DeterministicPolicy: dimension mismatch");
}

Mat DeterministicPolicy::act(const Mat& states, MlpCache* cache) const {
  return tanh_head(net_.forward(states, cache), bounds_);
}

Vec DeterministicPolicy::act(const Vec& state) const { return act(Mat(state)).col(0); }

double DeterministicPolicy::weighted_mse(const Mat& states, const Mat& actions, const Vec& weights,
                                         MlpGrads* grads) const {
  const Eigen::Index batch = states.cols();
  if (actions.cols() != batch || weights.size() != batch || actions.rows() != action_dim()) {
    throw std::invalid_argument("weighted_mse: batch shape mismatch");
  }
  MlpCache cache;
  const Mat raw = net_.forward(states, grads != nullptr ? &cache : nullptr);
  const Mat out = tanh_head(raw, bounds_);
  const Mat diff = out - actions;
  const double inv_b = 1.0 / static_cast<double>(batch);
  const Vec sq = diff.colwise().squaredNorm().transpose();
  const double loss = weights.dot(sq) * inv_b;
  if (grads != nullptr) {
    Mat d_out = 2.0 * inv_b * diff;
    for (Eigen::Index b = 0; b < batch; ++b) d_out.col(b) *= weights(b);
    *grads = net_.backward(cache, d_out.cwiseProduct(tanh_head_jacobian(raw, bounds_.half_range())));
  }
  return loss;
}

Mat DeterministicPolicy::input_gradient(const Mat& states, const Mat& upstream) const {
  MlpCache cache;
  const Mat raw = net_.forward(states, &cache);
  return net_.backward(cache, upstream.cwiseProduct(tanh_head_jacobian(raw, bounds_.half_range()))).input;
}

// ---------------------------------------------------------------------------
// Value and critics

ValueNet::ValueNet(int state_dim, const std::vector<int>& hidden, Rng& rng)
    : net_(with_ends(state_dim, hidden, 1), rng) {}

Vec ValueNet::values(const Mat& states, MlpCache* cache) const {
  return net_.forward(states, cache).row(0).transpose();
}

double ValueNet::value(const Vec& state) const { return net_.forward(state)(0); }

CriticEnsemble::CriticEnsemble(int state_dim, int action_dim, int size,
                               const std::vector<int>& hidden, double quantile_level, Rng& rng)
    : state_dim_(state_dim), action_dim_(action_dim), quantile_level_(quantile_level) {
  if (size < 1) throw std::invalid_argument("CriticEnsemble: size must be at least 1");
  if (!(quantile_level >= 0.0 && quantile_level <= 1.0)) {
    throw std::invalid_argument("CriticEnsemble: quantile level must lie in [0,1]");
  }
  for (int i = 0; i < size; ++i) {
    online_.emplace_back(with_ends(state_dim + action_dim, hidden, 1), rng);
    targets_.push_back(online_.back());
  }
}

CriticEnsemble::CriticEnsemble(int state_dim, std::vector<Mlp> online, std::vector<Mlp> targets,
                               double quantile_level)
    : state_dim_(state_dim), quantile_level_(quantile_level), online_(std::move(online)), targets_(std::move(targets)) {
  if (online_.empty() || online_.size() != targets_.size()) {
    throw std::invalid_argument("CriticEnsemble: member/target count mismatch");
  }
  for (std::size_t i = 0; i < online_.size(); ++i) {
    if (online_[i].widths() != targets_[i].widths() || online_[i].output_dim() != 1 ||
        online_[i].widths() != online_.front().widths()) {
      throw std::invalid_argument("CriticEnsemble: inconsistent member architectures");
    }
  }
  action_dim_ = online_.front().input_dim() - state_dim_;
  if (state_dim_ <= 0 || action_dim_ <= 0) throw std::invalid_argument("CriticEnsemble: bad input split");
}

Mat CriticEnsemble::stack_inputs(const Mat& states, const Mat& actions) {
  if (states.cols() != actions.cols()) throw std::invalid_argument("stack_inputs: batch mismatch");
  Mat x(states.rows() + actions.rows(), states.cols());
  x.topRows(states.rows()) = states;
  x.bottomRows(actions.rows()) = actions;
  return x;
}

Mat CriticEnsemble::q_all(const Mat& states, const Mat& actions, bool target) const {
  const Mat x = stack_inputs(states, actions);
  const auto& nets = target ? targets_ : online_;
  Mat out(nets.size(), states.cols());
  for (std::size_t i = 0; i < nets.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = nets[i].forward(x);
  return out;
}

Vec CriticEnsemble::q_aggregate(const Mat& states, const Mat& actions, bool target) const {
  const Mat all = q_all(states, actions, target);
  Vec out(all.cols());
  if (all.rows() == 1) return all.row(0).transpose();
  std::vector<double> column(static_cast<std::size_t>(all.rows()));
  for (Eigen::Index b = 0; b < all.cols(); ++b) {
    for (Eigen::Index i = 0; i < all.rows(); ++i) column[static_cast<std::size_t>(i)] = all(i, b);
    out(b) = quantile(column, quantile_level_);
  }
  return out;
}

double CriticEnsemble::q_aggregate(const Vec& state, const Vec& action, bool target) const {
  return q_aggregate(Mat(state), Mat(action), target)(0);
}

Vec CriticEnsemble::mean_q_with_input_grad(const Mat& states, const Mat& actions, Mat* d_states,
                                           Mat* d_actions) const {
  const Mat x = stack_inputs(states, actions);
  const double inv_n = 1.0 / static_cast<double>(targets_.size());
  Vec q = Vec::Zero(states.cols());
  Mat d_x = Mat::Zero(x.rows(), x.cols());
  const Mat upstream = Mat::Constant(1, x.cols(), inv_n);
  for (const auto& net : targets_) {
    MlpCache cache;
    q += inv_n * net.forward(x, &cache).row(0).transpose();
    d_x += net.backward(cache, upstream).input;
  }
  if (d_states != nullptr) *d_states = d_x.topRows(states.rows());
  if (d_actions != nullptr) *d_actions = d_x.bottomRows(actions.rows());
  return q;
}

void CriticEnsemble::update_targets(double rho) {
  for (std::size_t i = 0; i < online_.size(); ++i) polyak_update(targets_[i], online_[i], rho);
}

}  // namespace rpexlab
