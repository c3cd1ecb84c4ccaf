#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "deepconsensus/data/idx.h"

namespace dc::data {

/// Intensities divided by 255.
Tensorf normalize(const Tensorf& images);

struct Batch {
  Tensorf x;  // normalised, [B,C,H,W]
  std::vector<int> y;
  std::vector<std::size_t> indices;
};

/// Mini-batches over an image set. With shuffling, each epoch draws a new
/// permutation from one generator seeded at construction, so the sequence of
/// epochs is reproducible.
class BatchStream {
 public:
  BatchStream(const ImageSet& set, std::size_t batch_size, std::uint64_t seed, bool shuffle = true);

  /// Starts the next epoch.
  void reset();
  bool next(Batch& batch);
  std::size_t batches_per_epoch() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const ImageSet* set_;
  std::size_t batch_size_;
  bool shuffle_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Batch of samples [begin, end) in dataset order.
Batch make_batch(const ImageSet& set, std::size_t begin, std::size_t end);
Batch make_batch(const ImageSet& set, const std::vector<std::size_t>& indices);

}  // namespace dc::data
