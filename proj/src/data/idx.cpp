#include "deepconsensus/data/idx.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>

namespace dc::data {

namespace {

std::string at_offset(const std::string& origin, std::size_t offset, const std::string& what) {
  return origin + ": " + what + " at byte offset " + std::to_string(offset);
}

}  // namespace

IdxArray parse_idx(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < 4) throw DataError(at_offset(origin, bytes.size(), "file ends inside the magic number"));
  if (bytes[0] != 0 || bytes[1] != 0) throw DataError(at_offset(origin, 0, "bad IDX magic"));
  if (bytes[2] != 0x08) {
    throw DataError(at_offset(origin, 2, "unsupported IDX element type " + std::to_string(bytes[2]) +
                                             " (only unsigned bytes)"));
  }
  const std::size_t rank = bytes[3];
  if (rank == 0) throw DataError(at_offset(origin, 3, "IDX rank is zero"));
  const std::size_t header = 4 + 4 * rank;
  if (bytes.size() < header) throw DataError(at_offset(origin, bytes.size(), "file ends inside the dimension table"));
  IdxArray out;
  std::size_t count = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    const std::uint8_t* p = bytes.data() + 4 + 4 * d;
    const std::uint32_t dim = (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
                              (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
    out.dims.push_back(dim);
    count *= dim;
  }
  if (bytes.size() < header + count) {
    throw DataError(at_offset(origin, bytes.size(),
                              "truncated payload (expected " + std::to_string(header + count) + " bytes)"));
  }
  if (bytes.size() > header + count) {
    throw DataError(at_offset(origin, header + count, "trailing bytes after payload"));
  }
  out.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return out;
}

IdxArray read_idx(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_idx(bytes, path.string());
}

std::vector<std::uint8_t> encode_idx(const IdxArray& a) {
  std::vector<std::uint8_t> out = {0, 0, 0x08, static_cast<std::uint8_t>(a.dims.size())};
  for (auto d : a.dims) {
    out.push_back(static_cast<std::uint8_t>(d >> 24));
    out.push_back(static_cast<std::uint8_t>(d >> 16));
    out.push_back(static_cast<std::uint8_t>(d >> 8));
    out.push_back(static_cast<std::uint8_t>(d));
  }
  out.insert(out.end(), a.values.begin(), a.values.end());
  return out;
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  const auto bytes = encode_idx(array);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ImageSet read_image_set(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::string name, std::size_t num_classes) {
  const auto img = read_idx(images);
  const auto lab = read_idx(labels);
  if (img.dims.size() != 3 && img.dims.size() != 4) {
    throw DataError(images.string() + ": expected rank 3 or 4 image array");
  }
  if (lab.dims.size() != 1 || lab.dims[0] != img.dims[0]) {
    throw DataError(labels.string() + ": label count does not match " + images.string());
  }
  const std::size_t N = img.dims[0], H = img.dims[1], W = img.dims[2];
  const std::size_t C = img.dims.size() == 4 ? img.dims[3] : 1;
  ImageSet set;
  set.name = std::move(name);
  set.images = Tensorf({N, C, H, W});
  auto dst = set.images.data();
  // IDX stores channels last; tensors are channels first.
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < C; ++c)
          dst[((n * C + c) * H + y) * W + x] = img.values[((n * H + y) * W + x) * C + c];
  std::size_t max_label = 0;
  for (auto v : lab.values) {
    set.labels.push_back(v);
    max_label = std::max<std::size_t>(max_label, v);
  }
  set.num_classes = num_classes ? num_classes : max_label + 1;
  if (max_label >= set.num_classes) throw DataError(labels.string() + ": label exceeds class count");
  return set;
}

void write_image_set(const ImageSet& set, const std::filesystem::path& images,
                     const std::filesystem::path& labels) {
  const std::size_t N = set.size(), C = set.channels(), H = set.height(), W = set.width();
  IdxArray img;
  img.dims = {static_cast<std::uint32_t>(N), static_cast<std::uint32_t>(H), static_cast<std::uint32_t>(W)};
  if (C != 1) img.dims.push_back(static_cast<std::uint32_t>(C));
  img.values.resize(N * C * H * W);
  const auto src = set.images.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < C; ++c) {
          const float v = std::clamp(std::round(src[((n * C + c) * H + y) * W + x]), 0.0f, 255.0f);
          img.values[((n * H + y) * W + x) * C + c] = static_cast<std::uint8_t>(v);
        }
  IdxArray lab;
  lab.dims = {static_cast<std::uint32_t>(N)};
  for (int l : set.labels) {
    if (l < 0 || l > 255) throw DataError("label " + std::to_string(l) + " does not fit in an IDX byte");
    lab.values.push_back(static_cast<std::uint8_t>(l));
  }
  write_idx(images, img);
  write_idx(labels, lab);
}

ImageSet load_mnist(const std::filesystem::path& dir, Split split) {
  const std::string prefix = split == Split::train ? "train" : "t10k";
  const auto images = dir / (prefix + "-images-idx3-ubyte");
  const auto labels = dir / (prefix + "-labels-idx1-ubyte");
  for (const auto& p : {images, labels}) {
    if (!std::filesystem::exists(p)) {
      throw DataError("missing dataset file " + p.string() +
                      "\n  Place the four uncompressed MNIST IDX files (train-images-idx3-ubyte, "
                      "train-labels-idx1-ubyte, t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte) in one "
                      "directory and point DC_DATA_DIR (or --data-dir) at it.\n  Downloaded .gz files "
                      "must be decompressed first (gunzip *.gz).");
    }
  }
  return read_image_set(images, labels, split == Split::train ? "mnist-train" : "mnist-test", 10);
}

std::filesystem::path data_root(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("DC_DATA_DIR"); env && *env) return env;
  return fallback;
}

ImageSet subset(const ImageSet& set, const std::vector<std::size_t>& indices) {
  const std::size_t per = set.image_numel();
  ImageSet out;
  out.name = set.name;
  out.num_classes = set.num_classes;
  out.images = Tensorf({indices.size(), set.channels(), set.height(), set.width()});
  auto dst = out.images.data();
  const auto src = set.images.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= set.size()) throw std::out_of_range("subset index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per,
                dst.begin() + static_cast<std::ptrdiff_t>(i * per));
    out.labels.push_back(set.labels[indices[i]]);
  }
  return out;
}

ImageSet head(const ImageSet& set, std::size_t n) {
  std::vector<std::size_t> idx(std::min(n, set.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return subset(set, idx);
}

}  // namespace dc::data
