#include "brc/mnist.hpp"

#include "brc/numerics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>

namespace brc {
namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
         (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

std::string hex(std::uint32_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s = "0x";
  for (int shift = 28; shift >= 0; shift -= 4) s += digits[(v >> shift) & 0xf];
  return s;
}

void check_magic(std::span<const std::uint8_t> bytes, std::uint32_t expected, std::size_t header) {
  if (bytes.size() < 4) throw IdxError(IdxError::Kind::truncated, "idx: file shorter than its magic number");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != expected)
    throw IdxError(IdxError::Kind::bad_magic, "idx: magic " + hex(magic) + ", expected " + hex(expected));
  if (bytes.size() < header) throw IdxError(IdxError::Kind::truncated, "idx: truncated header");
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::io, "idx: cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IdxError(IdxError::Kind::io, "idx: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

// 5x7 glyphs, one string of 35 cells per digit.
constexpr std::array<const char*, 10> kGlyphs = {
    " ### #   ##  ### # ###  ##   # ### ",  // 0
    "  #   ##    #    #    #    #   ### ",  // 1
    " ### #   #    #   #   #   #   #####",  // 2
    "#####   #   #     #     ##   # ### ",  // 3
    "   #   ##  # # #  # #####   #    # ",  // 4
    "######    ####     #    ##   # ### ",  // 5
    "  ##  #   #    #### #   ##   # ### ",  // 6
    "#####    #   #   #   #    #    #   ",  // 7
    " ### #   ##   # ### #   ##   # ### ",  // 8
    " ### #   ##   # ####    #   #  ##  ",  // 9
};

}  // namespace

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  check_magic(bytes, kIdxImageMagic, 16);
  IdxImages out;
  out.count = read_be32(bytes, 4);
  out.rows = read_be32(bytes, 8);
  out.cols = read_be32(bytes, 12);
  const std::size_t need = std::size_t(out.count) * out.rows * out.cols;
  if (bytes.size() - 16 < need)
    throw IdxError(IdxError::Kind::truncated, "idx: " + std::to_string(out.count) + " images need " +
                                                  std::to_string(need) + " pixel bytes, found " +
                                                  std::to_string(bytes.size() - 16));
  out.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + std::ptrdiff_t(need));
  return out;
}

IdxLabels parse_idx_labels(std::span<const std::uint8_t> bytes) {
  check_magic(bytes, kIdxLabelMagic, 8);
  const std::uint32_t count = read_be32(bytes, 4);
  if (bytes.size() - 8 < count)
    throw IdxError(IdxError::Kind::truncated, "idx: " + std::to_string(count) + " labels declared, " +
                                                  std::to_string(bytes.size() - 8) + " present");
  IdxLabels out;
  out.labels.assign(bytes.begin() + 8, bytes.begin() + 8 + count);
  return out;
}

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images) {
  require(images.pixels.size() == std::size_t(images.count) * images.rows * images.cols,
          "encode_idx_images: pixel buffer does not match dimensions");
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.pixels.size());
  write_be32(out, kIdxImageMagic);
  write_be32(out, images.count);
  write_be32(out, images.rows);
  write_be32(out, images.cols);
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const IdxLabels& labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.labels.size());
  write_be32(out, kIdxLabelMagic);
  write_be32(out, std::uint32_t(labels.labels.size()));
  out.insert(out.end(), labels.labels.begin(), labels.labels.end());
  return out;
}

IdxImages read_idx_images(const std::filesystem::path& path) { return parse_idx_images(slurp(path)); }
IdxLabels read_idx_labels(const std::filesystem::path& path) { return parse_idx_labels(slurp(path)); }

void write_idx_images(const std::filesystem::path& path, const IdxImages& images) {
  dump(path, encode_idx_images(images));
}

void write_idx_labels(const std::filesystem::path& path, const IdxLabels& labels) {
  dump(path, encode_idx_labels(labels));
}

MnistDataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels) {
  MnistDataset data{read_idx_images(images), read_idx_labels(labels)};
  if (data.images.count != data.labels.labels.size())
    throw IdxError(IdxError::Kind::count_mismatch, "idx: " + std::to_string(data.images.count) + " images but " +
                                                       std::to_string(data.labels.labels.size()) + " labels");
  for (std::uint8_t label : data.labels.labels)
    if (label > 9) throw IdxError(IdxError::Kind::bad_label, "idx: label " + std::to_string(label) + " outside 0-9");
  return data;
}

std::vector<double> pad_image(std::span<const double> image, std::size_t rows, std::size_t cols, std::size_t side) {
  require(image.size() == rows * cols, "pad_image: buffer does not match dimensions");
  require(rows <= side && cols <= side, "pad_image: image larger than target");
  std::vector<double> out(side * side, 0.0);
  const std::size_t top = (side - rows) / 2, left = (side - cols) / 2;
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(image.begin() + std::ptrdiff_t(r * cols), cols, out.begin() + std::ptrdiff_t((top + r) * side + left));
  return out;
}

std::vector<double> downsample_image(std::span<const double> image, std::size_t rows, std::size_t cols,
                                     std::size_t side) {
  require(image.size() == rows * cols, "downsample_image: buffer does not match dimensions");
  require(side >= 1, "downsample_image: empty target");
  // Overlap of source cell [i, i+1) with target cell [k*s, (k+1)*s) in source units.
  auto overlap = [](std::size_t i, std::size_t k, double scale) {
    const double lo = std::max(double(i), double(k) * scale);
    const double hi = std::min(double(i + 1), double(k + 1) * scale);
    return std::max(0.0, hi - lo);
  };
  const double sr = double(rows) / double(side), sc = double(cols) / double(side);
  std::vector<double> out(side * side, 0.0);
  for (std::size_t kr = 0; kr < side; ++kr)
    for (std::size_t kc = 0; kc < side; ++kc) {
      double acc = 0.0;
      const auto r0 = std::size_t(std::floor(double(kr) * sr)), r1 = std::min(rows, std::size_t(std::ceil(double(kr + 1) * sr)));
      const auto c0 = std::size_t(std::floor(double(kc) * sc)), c1 = std::min(cols, std::size_t(std::ceil(double(kc + 1) * sc)));
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) acc += overlap(r, kr, sr) * overlap(c, kc, sc) * image[r * cols + c];
      out[kr * side + kc] = acc / (sr * sc);
    }
  return out;
}

MnistDataset synthetic_digits(std::size_t count, std::uint64_t seed) {
  constexpr std::uint32_t side = 28, scale = 3, glyph_w = 5, glyph_h = 7;
  Rng rng(seed);
  MnistDataset data;
  data.images.count = std::uint32_t(count);
  data.images.rows = side;
  data.images.cols = side;
  data.images.pixels.assign(count * side * side, 0);
  data.labels.labels.resize(count);
  for (std::size_t n = 0; n < count; ++n) {
    const auto digit = std::uint8_t(rng.below(10));
    data.labels.labels[n] = digit;
    const auto max_top = side - glyph_h * scale, max_left = side - glyph_w * scale;
    const auto top = std::uint32_t(rng.below(max_top + 1)), left = std::uint32_t(rng.below(max_left + 1));
    const double ink = rng.uniform(0.6, 1.0);
    std::uint8_t* img = data.images.pixels.data() + n * side * side;
    for (std::uint32_t gy = 0; gy < glyph_h; ++gy)
      for (std::uint32_t gx = 0; gx < glyph_w; ++gx) {
        if (kGlyphs[digit][gy * glyph_w + gx] != '#') continue;
        for (std::uint32_t dy = 0; dy < scale; ++dy)
          for (std::uint32_t dx = 0; dx < scale; ++dx)
            img[(top + gy * scale + dy) * side + left + gx * scale + dx] = std::uint8_t(std::lround(255.0 * ink));
      }
    for (std::uint32_t p = 0; p < side * side; ++p) {
      const double noisy = double(img[p]) + 20.0 * rng.normal();
      img[p] = std::uint8_t(std::clamp(std::lround(noisy), 0L, 255L));
    }
  }
  return data;
}

}  // namespace brc
