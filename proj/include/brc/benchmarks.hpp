// Generators for the long-memory benchmarks: copy-first-input, denoising,
// sparse (modified) copy, and pixel-by-pixel sequential MNIST.
//
// Every generator is a pure function of its arguments and the Rng stream it
// consumes, so a fixed seed reproduces the exact sample stream.
#pragma once

#include "brc/mnist.hpp"
#include "brc/numerics.hpp"

#include <algorithm>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace brc {

enum class BenchmarkKind { copy_first, denoising, sparse_copy, seq_mnist };

inline std::string_view to_string(BenchmarkKind kind) {
  switch (kind) {
    case BenchmarkKind::copy_first: return "copy_first";
    case BenchmarkKind::denoising: return "denoising";
    case BenchmarkKind::sparse_copy: return "sparse_copy";
    case BenchmarkKind::seq_mnist: return "seq_mnist";
  }
  return "?";
}

inline BenchmarkKind parse_benchmark_kind(std::string_view name) {
  for (auto kind : {BenchmarkKind::copy_first, BenchmarkKind::denoising, BenchmarkKind::sparse_copy,
                    BenchmarkKind::seq_mnist})
    if (to_string(kind) == name) return kind;
  throw ContractError("unknown benchmark '" + std::string(name) + "'");
}

struct SampleSpec {
  BenchmarkKind kind = BenchmarkKind::copy_first;
  Index T = 50;         // sequence length (synthetic tasks)
  Index N = 0;          // denoising forgetting period
  Index n_black = 0;    // trailing black pixels (seq_mnist)
  Index image_side = 0; // seq_mnist: 0 keeps the native size, else resample to side x side
  bool pad32 = false;   // seq_mnist: zero-pad 28x28 to 32x32 before any resampling

  bool classification() const { return kind == BenchmarkKind::seq_mnist; }
  Index input_dim() const { return kind == BenchmarkKind::denoising ? 2 : 1; }
  Index output_dim() const {
    switch (kind) {
      case BenchmarkKind::denoising: return 5;
      case BenchmarkKind::seq_mnist: return 10;
      default: return 1;
    }
  }
};

/// Positions eligible for denoising markers: {0, ..., T - max(N, 1) - 1}.
/// The final step carries the end marker, so it is never a marker candidate.
inline Index denoising_window(Index T, Index N) { return T - std::max<Index>(N, 1); }

inline void validate(const SampleSpec& spec) {
  if (spec.kind == BenchmarkKind::seq_mnist) {
    require(spec.n_black >= 0, "seq_mnist: n_black must be non-negative");
    require(spec.image_side >= 0, "seq_mnist: image side must be non-negative");
    return;
  }
  require(spec.T >= 1, "benchmark: T must be at least 1");
  if (spec.kind == BenchmarkKind::denoising) {
    require(spec.N >= 0 && spec.N <= spec.T - 5, "denoising: N must lie in {0, ..., T-5}");
    require(denoising_window(spec.T, spec.N) >= 5,
            "denoising: need five distinct marker steps before the forgetting period and the end marker");
  }
}

template <typename Scalar>
struct LabeledSequence {
  Matrix<Scalar> inputs;  // T x features
  Vector<Scalar> target;  // regression target, empty for classification
  int label = -1;         // class index for classification
};

template <typename Scalar>
LabeledSequence<Scalar> gen_copy_first(Index T, Rng& rng) {
  require(T >= 1, "copy_first: T must be at least 1");
  LabeledSequence<Scalar> s;
  s.inputs.resize(T, 1);
  for (Index t = 0; t < T; ++t) s.inputs(t, 0) = Scalar(rng.normal());
  s.target = Vector<Scalar>::Constant(1, s.inputs(0, 0));
  return s;
}

/// Channel 0 is the marker code (0 at the five relevant steps, 1 at the last
/// step, -1 elsewhere); channel 1 is N(0,1) data. The target lists the data
/// values at the marker steps in increasing time order.
template <typename Scalar>
LabeledSequence<Scalar> gen_denoising(Index T, Index N, Rng& rng) {
  validate(SampleSpec{BenchmarkKind::denoising, T, N});
  const Index window = denoising_window(T, N);
  // Partial Fisher-Yates: five distinct positions from the window.
  std::vector<Index> pool(static_cast<std::size_t>(window));
  for (Index i = 0; i < window; ++i) pool[std::size_t(i)] = i;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto j = i + std::size_t(rng.below(std::uint64_t(window) - i));
    std::swap(pool[i], pool[j]);
  }
  std::vector<Index> marks(pool.begin(), pool.begin() + 5);
  std::sort(marks.begin(), marks.end());

  LabeledSequence<Scalar> s;
  s.inputs.resize(T, 2);
  s.inputs.col(0).setConstant(Scalar(-1));
  for (Index t = 0; t < T; ++t) s.inputs(t, 1) = Scalar(rng.normal());
  s.inputs(T - 1, 0) = Scalar(1);
  s.target.resize(5);
  for (std::size_t i = 0; i < 5; ++i) {
    s.inputs(marks[i], 0) = Scalar(0);
    s.target(Index(i)) = s.inputs(marks[i], 1);
  }
  return s;
}

/// Marker steps recovered from an emitted denoising sequence.
template <typename Scalar>
std::vector<Index> denoising_markers(const Matrix<Scalar>& inputs) {
  std::vector<Index> marks;
  for (Index t = 0; t < inputs.rows(); ++t)
    if (inputs(t, 0) == Scalar(0)) marks.push_back(t);
  return marks;
}

template <typename Scalar>
LabeledSequence<Scalar> gen_sparse_copy(Index T, Rng& rng) {
  require(T >= 1, "sparse_copy: T must be at least 1");
  LabeledSequence<Scalar> s;
  s.inputs = Matrix<Scalar>::Zero(T, 1);
  const auto pos = Index(rng.below(std::uint64_t(T)));
  s.inputs(pos, 0) = Scalar(rng.normal());
  s.target = Vector<Scalar>::Constant(1, s.inputs(pos, 0));
  return s;
}

/// Length of a sequential-MNIST sequence built from rows x cols images.
inline Index seq_mnist_length(const SampleSpec& spec, Index rows, Index cols) {
  Index side_r = rows, side_c = cols;
  if (spec.pad32) side_r = side_c = std::max<Index>({rows, cols, 32});
  if (spec.image_side > 0) side_r = side_c = spec.image_side;
  return side_r * side_c + spec.n_black;
}

/// Pixels scaled to [0, 1], optionally padded and resampled, flattened
/// row-major, then followed by n_black zeros.
template <typename Scalar>
LabeledSequence<Scalar> seq_mnist_sample(std::span<const std::uint8_t> image, std::size_t rows, std::size_t cols,
                                         int label, const SampleSpec& spec) {
  require(image.size() == rows * cols, "seq_mnist: image buffer does not match dimensions");
  std::vector<double> pixels(image.size());
  std::transform(image.begin(), image.end(), pixels.begin(), [](std::uint8_t p) { return double(p) / 255.0; });
  if (spec.pad32) {
    const std::size_t side = std::max<std::size_t>({rows, cols, 32});
    pixels = pad_image(pixels, rows, cols, side);
    rows = cols = side;
  }
  if (spec.image_side > 0) {
    pixels = downsample_image(pixels, rows, cols, std::size_t(spec.image_side));
    rows = cols = std::size_t(spec.image_side);
  }
  LabeledSequence<Scalar> s;
  s.inputs = Matrix<Scalar>::Zero(Index(pixels.size()) + spec.n_black, 1);
  for (std::size_t i = 0; i < pixels.size(); ++i) s.inputs(Index(i), 0) = Scalar(pixels[i]);
  s.label = label;
  return s;
}

/// Time-major batch: inputs[t] is features x batch, targets is outputs x batch.
template <typename Scalar>
struct SequenceBatch {
  std::vector<Matrix<Scalar>> inputs;
  Matrix<Scalar> targets;
  std::vector<int> labels;

  Index size() const { return inputs.empty() ? 0 : inputs.front().cols(); }
  Index length() const { return Index(inputs.size()); }
};

template <typename Scalar>
SequenceBatch<Scalar> make_batch(const std::vector<LabeledSequence<Scalar>>& samples) {
  require(!samples.empty(), "make_batch: no samples");
  const Index T = samples.front().inputs.rows(), d = samples.front().inputs.cols();
  const auto B = Index(samples.size());
  SequenceBatch<Scalar> batch;
  batch.inputs.assign(std::size_t(T), Matrix<Scalar>(d, B));
  const bool regression = samples.front().label < 0;
  if (regression) batch.targets.resize(samples.front().target.size(), B);
  for (Index b = 0; b < B; ++b) {
    const auto& s = samples[std::size_t(b)];
    require(s.inputs.rows() == T && s.inputs.cols() == d, "make_batch: samples differ in shape");
    for (Index t = 0; t < T; ++t) batch.inputs[std::size_t(t)].col(b) = s.inputs.row(t).transpose();
    if (regression)
      batch.targets.col(b) = s.target;
    else
      batch.labels.push_back(s.label);
  }
  return batch;
}

/// A benchmark bound to its data: synthetic generators need only the spec,
/// sequential MNIST also needs train and test image sets.
class Benchmark {
 public:
  explicit Benchmark(SampleSpec spec) : spec_(spec) {
    validate(spec_);
    require(spec_.kind != BenchmarkKind::seq_mnist, "seq_mnist benchmark needs image data");
  }

  Benchmark(SampleSpec spec, std::shared_ptr<const MnistDataset> train, std::shared_ptr<const MnistDataset> test)
      : spec_(spec), train_(std::move(train)), test_(std::move(test)) {
    validate(spec_);
    require(spec_.kind == BenchmarkKind::seq_mnist, "image data given to a synthetic benchmark");
    require(train_ && train_->size() > 0 && test_ && test_->size() > 0, "seq_mnist: empty image set");
  }

  const SampleSpec& spec() const { return spec_; }

  Index sequence_length() const {
    if (spec_.kind != BenchmarkKind::seq_mnist) return spec_.T;
    return seq_mnist_length(spec_, train_->images.rows, train_->images.cols);
  }

  template <typename Scalar>
  LabeledSequence<Scalar> sample(Rng& rng, bool test = false) const {
    switch (spec_.kind) {
      case BenchmarkKind::copy_first: return gen_copy_first<Scalar>(spec_.T, rng);
      case BenchmarkKind::denoising: return gen_denoising<Scalar>(spec_.T, spec_.N, rng);
      case BenchmarkKind::sparse_copy: return gen_sparse_copy<Scalar>(spec_.T, rng);
      case BenchmarkKind::seq_mnist: {
        const MnistDataset& data = test ? *test_ : *train_;
        const auto i = std::size_t(rng.below(data.size()));
        return seq_mnist_sample<Scalar>(data.images.image(i), data.images.rows, data.images.cols,
                                        data.labels.labels[i], spec_);
      }
    }
    throw ContractError("bad benchmark kind");
  }

  template <typename Scalar>
  SequenceBatch<Scalar> batch(Index size, Rng& rng, bool test = false) const {
    std::vector<LabeledSequence<Scalar>> samples;
    samples.reserve(std::size_t(size));
    for (Index i = 0; i < size; ++i) samples.push_back(sample<Scalar>(rng, test));
    return make_batch(samples);
  }

  /// Fixed evaluation set. For sequential MNIST with count >= test size, the
  /// whole test split is used in order.
  template <typename Scalar>
  std::vector<LabeledSequence<Scalar>> test_set(Index count, Rng& rng) const {
    std::vector<LabeledSequence<Scalar>> out;
    if (spec_.kind == BenchmarkKind::seq_mnist && std::size_t(count) >= test_->size()) {
      for (std::size_t i = 0; i < test_->size(); ++i)
        out.push_back(seq_mnist_sample<Scalar>(test_->images.image(i), test_->images.rows, test_->images.cols,
                                               test_->labels.labels[i], spec_));
      return out;
    }
    for (Index i = 0; i < count; ++i) out.push_back(sample<Scalar>(rng, true));
    return out;
  }

 private:
  SampleSpec spec_;
  std::shared_ptr<const MnistDataset> train_, test_;
};

}  // namespace brc
