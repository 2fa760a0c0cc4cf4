#pragma once

#include "dgnlab/demos.hpp"
#include "dgnlab/rng.hpp"

#include <cstddef>
#include <vector>

namespace dgnlab {

/// Fixed-capacity ring of online transitions; the oldest entry is overwritten first.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, Index obs_dim, Index act_dim);

  /// Throws ContractError on dimension mismatch.
  void push(Transition t);

  std::size_t size() const noexcept { return size_; }
  std::size_t capacity() const noexcept { return capacity_; }
  bool empty() const noexcept { return size_ == 0; }
  /// i-th stored transition in insertion order, oldest first.
  const Transition& at(std::size_t i) const;

 private:
  std::size_t capacity_;
  Index obs_dim_, act_dim_;
  std::vector<Transition> ring_;
  std::size_t size_ = 0;
  std::size_t write_index_ = 0;
};

/// Column-major minibatch; column j is one transition.
struct Batch {
  Mat obs;
  Mat action;
  Vec reward;
  Mat next_obs;
  Vec done;
  std::vector<bool> from_demo;        // provenance of column j
  std::vector<std::size_t> source_index;  // index within its source

  Index size() const { return obs.cols(); }
};

/// Immutable store of demo transitions, flattened once.
class DemoStore {
 public:
  DemoStore() = default;
  explicit DemoStore(const DemoDataset& d);
  std::size_t size() const noexcept { return transitions_.size(); }
  bool empty() const noexcept { return transitions_.empty(); }
  const Transition& at(std::size_t i) const { return transitions_.at(i); }
  const std::vector<Transition>& all() const noexcept { return transitions_; }

 private:
  std::vector<Transition> transitions_;
};

/// Half the batch uniformly (with replacement) from each source, then shuffled.
/// With an empty online buffer every draw comes from the demos.
Batch sample_symmetric(const ReplayBuffer& online, const DemoStore& demos, std::size_t batch,
                       SeededRng& rng);

/// Uniform draws from the demos only.
Batch sample_demos(const DemoStore& demos, std::size_t batch, SeededRng& rng);

/// Packs transitions (in the given order) into a Batch.
Batch make_batch(const std::vector<const Transition*>& items);

}  // namespace dgnlab
