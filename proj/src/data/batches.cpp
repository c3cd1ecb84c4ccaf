#include "deepconsensus/data/batches.h"

#include <algorithm>
#include <stdexcept>

namespace dc::data {

Tensorf normalize(const Tensorf& images) {
  Tensorf out(images.shape());
  auto dst = out.data();
  const auto src = images.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] / 255.0f;
  return out;
}

Batch make_batch(const ImageSet& set, const std::vector<std::size_t>& indices) {
  const std::size_t per = set.image_numel();
  Batch b;
  b.indices = indices;
  b.x = Tensorf({indices.size(), set.channels(), set.height(), set.width()});
  auto dst = b.x.data();
  const auto src = set.images.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const float* s = src.data() + indices[i] * per;
    float* d = dst.data() + i * per;
    for (std::size_t j = 0; j < per; ++j) d[j] = s[j] / 255.0f;
    b.y.push_back(set.labels[indices[i]]);
  }
  return b;
}

Batch make_batch(const ImageSet& set, std::size_t begin, std::size_t end) {
  if (begin > end || end > set.size()) throw std::out_of_range("make_batch: bad range");
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  return make_batch(set, idx);
}

BatchStream::BatchStream(const ImageSet& set, std::size_t batch_size, std::uint64_t seed, bool shuffle)
    : set_(&set), batch_size_(batch_size), shuffle_(shuffle), rng_(seed) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  order_.resize(set.size());
  reset();
}

void BatchStream::reset() {
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (shuffle_) std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

bool BatchStream::next(Batch& batch) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  batch = make_batch(*set_, std::vector<std::size_t>(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                                      order_.begin() + static_cast<std::ptrdiff_t>(end)));
  cursor_ = end;
  return true;
}

std::size_t BatchStream::batches_per_epoch() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

}  // namespace dc::data
