#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepconsensus/autodiff/tensor.h"

namespace dc::data {

/// Missing, unreadable or malformed dataset files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Images in intensity units 0-255, [N,C,H,W], with one label per image.
struct ImageSet {
  Tensorf images;
  std::vector<int> labels;
  std::string name;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t image_numel() const { return channels() * height() * width(); }
};

/// Raw unsigned-byte IDX array.
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> values;
};

/// Parses a big-endian IDX file holding unsigned bytes (type code 0x08).
/// Errors name the byte offset at which the file stopped making sense.
IdxArray read_idx(const std::filesystem::path& path);
IdxArray parse_idx(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");
std::vector<std::uint8_t> encode_idx(const IdxArray& array);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

/// Pairs an image file ([N,H,W] or [N,H,W,C]) with a label file ([N]).
ImageSet read_image_set(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::string name, std::size_t num_classes = 0);
/// Writes images (rounded, clamped to 0-255) and labels as an IDX pair.
void write_image_set(const ImageSet& set, const std::filesystem::path& images,
                     const std::filesystem::path& labels);

enum class Split { train, test };

/// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte` from `dir`.
/// A missing file raises DataError with instructions for obtaining it.
ImageSet load_mnist(const std::filesystem::path& dir, Split split);

/// Dataset root: $DC_DATA_DIR when set, else `fallback`.
std::filesystem::path data_root(const std::filesystem::path& fallback = "data/mnist");

/// Images and labels at the given indices, in that order.
ImageSet subset(const ImageSet& set, const std::vector<std::size_t>& indices);
/// The first min(n, size) samples.
ImageSet head(const ImageSet& set, std::size_t n);

}  // namespace dc::data
