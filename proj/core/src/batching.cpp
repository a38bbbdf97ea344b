#include <algorithm>
#include <numeric>

#include "flowmix/data.hpp"

namespace flowmix {

IndexCycler::IndexCycler(std::size_t count, std::uint64_t seed) : order_(count), rng_(seed) {
  if (count == 0) {
    throw EmptySourceError("batch source is empty");
  }
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  reshuffle();
}

void IndexCycler::reshuffle() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::size_t IndexCycler::next() {
  if (cursor_ == order_.size()) {
    reshuffle();
  }
  return order_[cursor_++];
}

PairedBatchStream::PairedBatchStream(std::size_t labeled_count, std::size_t unlabeled_count, std::size_t batch_size,
                                     std::uint64_t seed)
    : labeled_((labeled_count == 0 ? throw EmptySourceError("labeled stream is empty") : labeled_count),
               derive_seed(seed, 1)),
      unlabeled_((unlabeled_count == 0 ? throw EmptySourceError("unlabeled stream is empty") : unlabeled_count),
                 derive_seed(seed, 2)),
      labeled_count_(labeled_count),
      unlabeled_count_(unlabeled_count),
      batch_size_(batch_size) {
  if (batch_size == 0) {
    throw ConfigError("batch size must be positive");
  }
}

PairedBatch PairedBatchStream::next() {
  PairedBatch batch;
  batch.labeled.reserve(batch_size_);
  batch.unlabeled.reserve(batch_size_);
  for (std::size_t i = 0; i < batch_size_; ++i) {
    batch.labeled.push_back(labeled_.next());
  }
  for (std::size_t i = 0; i < batch_size_; ++i) {
    batch.unlabeled.push_back(unlabeled_.next());
  }
  return batch;
}

std::size_t PairedBatchStream::steps_per_epoch() const noexcept {
  return std::max<std::size_t>(1, std::max(labeled_count_, unlabeled_count_) / batch_size_);
}

BatchStream::BatchStream(std::size_t count, std::size_t batch_size, std::uint64_t seed)
    : cycler_(count, derive_seed(seed, 1)), batch_size_(batch_size) {
  if (batch_size == 0) {
    throw ConfigError("batch size must be positive");
  }
}

std::vector<std::size_t> BatchStream::next() {
  std::vector<std::size_t> batch(batch_size_);
  for (auto& i : batch) {
    i = cycler_.next();
  }
  return batch;
}

}  // namespace flowmix
