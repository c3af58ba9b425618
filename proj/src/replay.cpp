#include "rpexlab/replay.hpp"

#include <cmath>
#include <stdexcept>

namespace rpexlab {

ReplayBuffer::ReplayBuffer(std::size_t capacity, int state_dim, int action_dim)
    : capacity_(capacity), state_dim_(state_dim), action_dim_(action_dim) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  data_.reserve(std::min<std::size_t>(capacity, 1u << 20));
}

ReplayBuffer ReplayBuffer::from_dataset(const TransitionDataset& ds) {
  ReplayBuffer buf(ds.size(), ds.state_dim, ds.action_dim);
  for (const auto& t : ds.records) buf.insert(t);
  return buf;
}

void ReplayBuffer::insert(Transition t) {
  if (static_cast<int>(t.s.size()) != state_dim_ || static_cast<int>(t.s2.size()) != state_dim_ ||
      static_cast<int>(t.a.size()) != action_dim_) {
    throw std::invalid_argument("transition dimensions do not match the buffer");
  }
  if (!t.finite()) throw std::invalid_argument("refusing to store a non-finite transition");
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
  } else {
    data_[cursor_] = std::move(t);
  }
  cursor_ = (cursor_ + 1) % capacity_;
}

std::size_t ReplayBuffer::sample_index(Rng& rng) const {
  if (data_.empty()) throw std::logic_error("sampling from an empty replay buffer");
  return static_cast<std::size_t>(uniform_index(rng, data_.size()));
}

TransitionDataset ReplayBuffer::to_dataset(const std::string& env_id, const std::string& source) const {
  TransitionDataset ds;
  ds.env_id = env_id;
  ds.behavior_id = source;
  ds.state_dim = state_dim_;
  ds.action_dim = action_dim_;
  const std::size_t start = data_.size() < capacity_ ? 0 : cursor_;
  for (std::size_t k = 0; k < data_.size(); ++k) ds.records.push_back(data_[(start + k) % data_.size()]);
  return ds;
}

void MixConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  if (!(offline_ratio >= 0.0 && offline_ratio <= 1.0)) throw std::invalid_argument("offline ratio must lie in [0,1]");
}

int MixConfig::offline_count() const {
  if (!retain_offline) return 0;
  return static_cast<int>(std::floor(offline_ratio * batch_size + 0.5));
}

int Batch::offline_count() const {
  int n = 0;
  for (bool b : from_offline) n += b ? 1 : 0;
  return n;
}

Batch make_batch(const std::vector<const Transition*>& records, const std::vector<bool>& from_offline) {
  if (records.empty()) throw std::invalid_argument("empty batch");
  const auto n = static_cast<Eigen::Index>(records.size());
  const auto ds = static_cast<Eigen::Index>(records.front()->s.size());
  const auto da = static_cast<Eigen::Index>(records.front()->a.size());
  Batch b;
  b.s.resize(ds, n);
  b.a.resize(da, n);
  b.s2.resize(ds, n);
  b.r.resize(n);
  b.done.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Transition& t = *records[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < ds; ++i) {
      b.s(i, j) = t.s[static_cast<std::size_t>(i)];
      b.s2(i, j) = t.s2[static_cast<std::size_t>(i)];
    }
    for (Eigen::Index i = 0; i < da; ++i) b.a(i, j) = t.a[static_cast<std::size_t>(i)];
    b.r(j) = t.r;
    b.done(j) = t.done ? 1.0 : 0.0;
  }
  b.from_offline = from_offline;
  return b;
}

Batch sample_uniform(ReplayBuffer& buf, int batch_size, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  buf.note_query();
  std::vector<const Transition*> recs;
  for (int i = 0; i < batch_size; ++i) recs.push_back(&buf.at(buf.sample_index(rng)));
  return make_batch(recs, std::vector<bool>(static_cast<std::size_t>(batch_size), true));
}

Batch mixed_sample(ReplayBuffer& offline, ReplayBuffer& online, const MixConfig& cfg, Rng& rng) {
  cfg.validate();
  const int n_off = cfg.offline_count();
  const int n_on = cfg.batch_size - n_off;
  if (n_off > 0 && offline.empty()) throw std::logic_error("offline buffer is empty");
  if (n_on > 0 && online.empty()) throw std::logic_error("online buffer is empty");
  std::vector<const Transition*> recs;
  std::vector<bool> flags;
  recs.reserve(static_cast<std::size_t>(cfg.batch_size));
  if (n_off > 0) offline.note_query();
  for (int i = 0; i < n_off; ++i) {
    recs.push_back(&offline.at(offline.sample_index(rng)));
    flags.push_back(true);
  }
  if (n_on > 0) online.note_query();
  for (int i = 0; i < n_on; ++i) {
    recs.push_back(&online.at(online.sample_index(rng)));
    flags.push_back(false);
  }
  for (std::size_t i = recs.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(recs[i - 1], recs[j]);
    std::vector<bool>::swap(flags[i - 1], flags[j]);
  }
  return make_batch(recs, flags);
}

}  // namespace rpexlab
