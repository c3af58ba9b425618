#pragma once

// FIFO replay buffers and mixed offline/online batch sampling.

#include <cstdint>
#include <vector>

#include "rpexlab/envs.hpp"
#include "rpexlab/neural.hpp"
#include "rpexlab/rng.hpp"

namespace rpexlab {

class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int state_dim, int action_dim);
  static ReplayBuffer from_dataset(const TransitionDataset& ds);

  /// Appends; once full, overwrites the oldest record.
  void insert(Transition t);

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return data_.empty(); }
  /// Slot the next insert writes to.
  std::size_t cursor() const { return cursor_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  /// Number of sample() calls that touched this buffer.
  std::uint64_t queries() const { return queries_; }

  const Transition& at(std::size_t i) const { return data_.at(i); }
  /// Uniform index over the filled region.
  std::size_t sample_index(Rng& rng) const;
  void note_query() { ++queries_; }

  /// Records oldest first.
  TransitionDataset to_dataset(const std::string& env_id, const std::string& source) const;

 private:
  std::size_t capacity_;
  int state_dim_;
  int action_dim_;
  std::vector<Transition> data_;
  std::size_t cursor_ = 0;
  std::uint64_t queries_ = 0;
};

struct MixConfig {
  double offline_ratio = 0.5;
  int batch_size = 256;
  bool retain_offline = true;
  void validate() const;
  /// Offline share of a batch: floor(ratio * batch + 0.5), or 0 without retention.
  int offline_count() const;
};

/// Column-major batch: one transition per column.
struct Batch {
  Mat s;
  Mat a;
  Vec r;
  Mat s2;
  Vec done;
  std::vector<bool> from_offline;

  Eigen::Index size() const { return s.cols(); }
  int offline_count() const;
};

Batch make_batch(const std::vector<const Transition*>& records, const std::vector<bool>& from_offline);

/// Uniform with replacement from one buffer.
Batch sample_uniform(ReplayBuffer& buf, int batch_size, Rng& rng);

/// Exactly offline_count() records from the offline buffer and the rest from
/// the online buffer, each uniformly with replacement, in shuffled order.
Batch mixed_sample(ReplayBuffer& offline, ReplayBuffer& online, const MixConfig& cfg, Rng& rng);

}  // namespace rpexlab
