// IDX container I/O (the big-endian format of the MNIST distribution) and
// small image utilities for building pixel-by-pixel sequences.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace brc {

class IdxError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, truncated, count_mismatch, bad_label };

  IdxError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major per image

  std::span<const std::uint8_t> image(std::size_t i) const {
    const std::size_t n = std::size_t(rows) * cols;
    return std::span<const std::uint8_t>(pixels).subspan(i * n, n);
  }
};

struct IdxLabels {
  std::vector<std::uint8_t> labels;
};

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
IdxLabels parse_idx_labels(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_idx_images(const IdxImages& images);
std::vector<std::uint8_t> encode_idx_labels(const IdxLabels& labels);

IdxImages read_idx_images(const std::filesystem::path& path);
IdxLabels read_idx_labels(const std::filesystem::path& path);
void write_idx_images(const std::filesystem::path& path, const IdxImages& images);
void write_idx_labels(const std::filesystem::path& path, const IdxLabels& labels);

struct MnistDataset {
  IdxImages images;
  IdxLabels labels;

  std::size_t size() const { return labels.labels.size(); }
};

/// Loads an image/label pair; counts must agree and labels must be 0-9.
MnistDataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Zero-pads (centered) a rows x cols image to side x side.
std::vector<double> pad_image(std::span<const double> image, std::size_t rows, std::size_t cols, std::size_t side);

/// Area-weighted resampling of a rows x cols image to side x side.
std::vector<double> downsample_image(std::span<const double> image, std::size_t rows, std::size_t cols,
                                     std::size_t side);

/// Procedural 28x28 handwritten-style digits: a 5x7 glyph per class scaled to
/// 3x3 blocks, randomly shifted, with random stroke intensity and pixel noise.
/// Stands in for MNIST when the real files are not available.
MnistDataset synthetic_digits(std::size_t count, std::uint64_t seed);

}  // namespace brc
