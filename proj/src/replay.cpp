#include "dgnlab/replay.hpp"

namespace dgnlab {

ReplayBuffer::ReplayBuffer(std::size_t capacity, Index obs_dim, Index act_dim)
    : capacity_(capacity), obs_dim_(obs_dim), act_dim_(act_dim) {
  if (capacity == 0) throw ContractError("ReplayBuffer: capacity must be positive");
  ring_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
  if (t.obs.size() != obs_dim_ || t.next_obs.size() != obs_dim_ || t.action.size() != act_dim_)
    throw ContractError("ReplayBuffer::push: transition dimensions do not match the environment");
  if (ring_.size() < capacity_) {
    ring_.push_back(std::move(t));
  } else {
    ring_[write_index_] = std::move(t);
  }
  write_index_ = (write_index_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw ContractError("ReplayBuffer::at: index out of range");
  const std::size_t oldest = size_ < capacity_ ? 0 : write_index_;
  return ring_[(oldest + i) % capacity_];
}

DemoStore::DemoStore(const DemoDataset& d) : transitions_(d.flat()) {}

Batch make_batch(const std::vector<const Transition*>& items) {
  if (items.empty()) throw ContractError("make_batch: empty batch");
  const Index n = static_cast<Index>(items.size());
  const Index od = items.front()->obs.size();
  const Index ad = items.front()->action.size();
  Batch b;
  b.obs.resize(od, n);
  b.action.resize(ad, n);
  b.reward.resize(n);
  b.next_obs.resize(od, n);
  b.done.resize(n);
  for (Index j = 0; j < n; ++j) {
    const Transition& t = *items[static_cast<std::size_t>(j)];
    b.obs.col(j) = t.obs;
    b.action.col(j) = t.action;
    b.reward[j] = t.reward;
    b.next_obs.col(j) = t.next_obs;
    b.done[j] = t.done ? 1.0 : 0.0;
  }
  return b;
}

namespace {

struct Pick {
  const Transition* t;
  bool demo;
  std::size_t index;
};

Batch pack(std::vector<Pick>& picks, SeededRng& rng) {
  shuffle(picks, rng);
  std::vector<const Transition*> items;
  items.reserve(picks.size());
  for (const Pick& p : picks) items.push_back(p.t);
  Batch b = make_batch(items);
  for (const Pick& p : picks) {
    b.from_demo.push_back(p.demo);
    b.source_index.push_back(p.index);
  }
  return b;
}

}  // namespace

Batch sample_symmetric(const ReplayBuffer& online, const DemoStore& demos, std::size_t batch,
                       SeededRng& rng) {
  if (batch == 0 || batch % 2 != 0) throw ContractError("sample_symmetric: batch must be even and positive");
  if (online.empty() && demos.empty()) throw ContractError("sample_symmetric: both sources are empty");
  std::vector<Pick> picks;
  picks.reserve(batch);
  std::size_t from_demo = batch / 2, from_online = batch / 2;
  if (online.empty()) from_demo = batch, from_online = 0;
  if (demos.empty()) from_demo = 0, from_online = batch;
  for (std::size_t i = 0; i < from_demo; ++i) {
    const std::size_t k = rng.below(demos.size());
    picks.push_back({&demos.at(k), true, k});
  }
  for (std::size_t i = 0; i < from_online; ++i) {
    const std::size_t k = rng.below(online.size());
    picks.push_back({&online.at(k), false, k});
  }
  return pack(picks, rng);
}

Batch sample_demos(const DemoStore& demos, std::size_t batch, SeededRng& rng) {
  if (demos.empty()) throw ContractError("sample_demos: no demo transitions");
  std::vector<Pick> picks;
  picks.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t k = rng.below(demos.size());
    picks.push_back({&demos.at(k), true, k});
  }
  return pack(picks, rng);
}

}  // namespace dgnlab
