// Losses, the Adam optimizer and the train/evaluate experiment loop.
#pragma once

#include "brc/benchmarks.hpp"
#include "brc/network.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <thread>
#include <vector>

namespace brc {

template <typename Scalar>
struct Loss {
  Scalar value = 0;
  Matrix<Scalar> grad;  // d(value)/d(prediction), same shape as the prediction
};

/// Mean squared error over the n entries of one prediction.
template <typename Scalar>
Loss<Scalar> mse_loss(const Vector<Scalar>& pred, const Vector<Scalar>& target) {
  require(pred.size() == target.size(), "mse_loss: length mismatch");
  require(pred.size() > 0, "mse_loss: empty prediction");
  const auto n = Scalar(pred.size());
  const Vector<Scalar> diff = pred - target;
  return {diff.squaredNorm() / n, Scalar(2) * diff / n};
}

/// Batch mean of per-column MSE.
template <typename Scalar>
Loss<Scalar> mse_loss(const Matrix<Scalar>& pred, const Matrix<Scalar>& target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), "mse_loss: shape mismatch");
  const auto denom = Scalar(pred.rows()) * Scalar(pred.cols());
  const Matrix<Scalar> diff = pred - target;
  return {diff.squaredNorm() / denom, Scalar(2) * diff / denom};
}

/// Softmax cross-entropy on raw logits, stabilized with log-sum-exp.
template <typename Scalar>
Loss<Scalar> cross_entropy_loss(const Vector<Scalar>& logits, int label) {
  require(label >= 0 && label < logits.size(), "cross_entropy_loss: class index out of range");
  const Scalar top = logits.maxCoeff();
  const Vector<Scalar> shifted = logits.array() - top;
  const Scalar log_norm = std::log(shifted.array().exp().sum());
  Loss<Scalar> out;
  out.value = log_norm - shifted(label);
  out.grad = (shifted.array() - log_norm).exp().matrix();
  out.grad(label, 0) -= Scalar(1);
  return out;
}

/// Batch mean of per-column cross-entropy.
template <typename Scalar>
Loss<Scalar> cross_entropy_loss(const Matrix<Scalar>& logits, const std::vector<int>& labels) {
  require(Index(labels.size()) == logits.cols(), "cross_entropy_loss: label count mismatch");
  const auto B = Scalar(logits.cols());
  Loss<Scalar> out;
  out.grad.resize(logits.rows(), logits.cols());
  for (Index j = 0; j < logits.cols(); ++j) {
    auto one = cross_entropy_loss<Scalar>(Vector<Scalar>(logits.col(j)), labels[std::size_t(j)]);
    out.value += one.value / B;
    out.grad.col(j) = one.grad / B;
  }
  return out;
}

template <typename Scalar>
Scalar accuracy(const Matrix<Scalar>& logits, const std::vector<int>& labels) {
  require(Index(labels.size()) == logits.cols(), "accuracy: label count mismatch");
  Index hits = 0;
  for (Index j = 0; j < logits.cols(); ++j) {
    Index best = 0;
    logits.col(j).maxCoeff(&best);
    hits += best == labels[std::size_t(j)];
  }
  return Scalar(hits) / Scalar(logits.cols());
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  AdamConfig config;
  long step = 0;
  std::vector<Matrix<Scalar>> m, v;  // one pair per parameter tensor, lazily sized
};

/// One bias-corrected Adam update over matching parameter/gradient tensors.
template <typename Scalar>
void adam_step(const std::vector<TensorView<Scalar>>& params, const std::vector<ConstTensorView<Scalar>>& grads,
               AdamState<Scalar>& state) {
  require(params.size() == grads.size(), "adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Matrix<Scalar>::Zero(p.rows, p.cols));
      state.v.push_back(Matrix<Scalar>::Zero(p.rows, p.cols));
    }
  }
  require(state.m.size() == params.size(), "adam_step: state was built for different parameters");
  ++state.step;
  const auto& c = state.config;
  const Scalar b1 = Scalar(c.beta1), b2 = Scalar(c.beta2);
  const Scalar correction1 = Scalar(1) - std::pow(b1, Scalar(state.step));
  const Scalar correction2 = Scalar(1) - std::pow(b2, Scalar(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i].rows == grads[i].rows && params[i].cols == grads[i].cols &&
                state.m[i].rows() == params[i].rows && state.m[i].cols() == params[i].cols,
            "adam_step: shape mismatch for " + params[i].name);
    const auto g = grads[i].map().array();
    state.m[i].array() = b1 * state.m[i].array() + (Scalar(1) - b1) * g;
    state.v[i].array() = b2 * state.v[i].array() + (Scalar(1) - b2) * g.square();
    params[i].map().array() -= Scalar(c.lr) * (state.m[i].array() / correction1) /
                               ((state.v[i].array() / correction2).sqrt() + Scalar(c.eps));
  }
}

template <typename Scalar>
void adam_step(Network<Scalar>& net, const Network<Scalar>& grads, AdamState<Scalar>& state) {
  adam_step(tensor_views(net), tensor_views(grads), state);
}

/// Rescales gradients so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
template <typename Scalar>
Scalar clip_global_norm(Network<Scalar>& grads, Scalar max_norm) {
  const Scalar norm = std::sqrt(squared_norm(grads));
  if (max_norm > 0 && norm > max_norm) scale(grads, max_norm / norm);
  return norm;
}

// ---------------------------------------------------------------------------
// Batch loss/gradient with optional fan-out over column chunks

enum class LossKind { mse, cross_entropy };

template <typename Scalar>
Loss<Scalar> batch_loss(const Matrix<Scalar>& logits, const SequenceBatch<Scalar>& batch, LossKind kind) {
  return kind == LossKind::mse ? mse_loss<Scalar>(logits, batch.targets) : cross_entropy_loss<Scalar>(logits, batch.labels);
}

template <typename Scalar>
SequenceBatch<Scalar> slice_batch(const SequenceBatch<Scalar>& batch, Index begin, Index count) {
  SequenceBatch<Scalar> out;
  out.inputs.reserve(batch.inputs.size());
  for (const auto& x : batch.inputs) out.inputs.emplace_back(x.middleCols(begin, count));
  if (batch.targets.size() != 0) out.targets = batch.targets.middleCols(begin, count);
  if (!batch.labels.empty())
    out.labels.assign(batch.labels.begin() + begin, batch.labels.begin() + begin + count);
  return out;
}

template <typename Scalar>
struct BatchGradient {
  Scalar loss = 0;
  Network<Scalar> grads;
};

/// Mean loss and gradient over a batch. With workers > 1 the batch is split
/// into contiguous column chunks, one thread each, and partial results are
/// reduced in chunk order so the result depends only on (batch, workers).
template <typename Scalar>
BatchGradient<Scalar> batch_gradient(const Network<Scalar>& net, const SequenceBatch<Scalar>& batch, LossKind kind,
                                     int workers = 1) {
  const Index B = batch.size();
  const Index chunks = std::clamp<Index>(workers, 1, B);
  auto one = [&](const SequenceBatch<Scalar>& part) {
    auto fwd = forward_batch(net, part.inputs);
    auto loss = batch_loss(fwd.logits, part, kind);
    return BatchGradient<Scalar>{loss.value, backward_batch(net, fwd.cache, loss.grad)};
  };
  if (chunks == 1) return one(batch);

  std::vector<BatchGradient<Scalar>> parts(std::size_t(chunks), BatchGradient<Scalar>{0, Network<Scalar>{}});
  std::vector<Index> begins, counts;
  for (Index c = 0; c < chunks; ++c) {
    begins.push_back(c * B / chunks);
    counts.push_back((c + 1) * B / chunks - c * B / chunks);
  }
  {
    std::vector<std::jthread> threads;
    for (Index c = 0; c < chunks; ++c)
      threads.emplace_back([&, c] { parts[std::size_t(c)] = one(slice_batch(batch, begins[std::size_t(c)], counts[std::size_t(c)])); });
  }
  BatchGradient<Scalar> total{0, Network<Scalar>::zeros(net.spec)};
  for (Index c = 0; c < chunks; ++c) {
    const Scalar weight = Scalar(counts[std::size_t(c)]) / Scalar(B);
    total.loss += weight * parts[std::size_t(c)].loss;
    add_scaled(total.grads, parts[std::size_t(c)].grads, weight);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Experiment loop

struct TrainConfig {
  long iterations = 30000;
  Index batch_size = 100;
  long eval_every = 1000;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::mse;
  double lr = 1e-3;
  double clip_norm = 5.0;
  Index test_size = 2000;
  int workers = 1;

  void validate() const {
    require(iterations >= 1 && batch_size >= 1 && eval_every >= 1 && test_size >= 1 && workers >= 1,
            "train config: counts must be at least 1");
  }
};

struct RunRecord {
  long iteration = 0;
  double train_loss = 0;   // mean minibatch loss since the previous record
  double test_metric = 0;  // MSE for regression, accuracy for classification
  double seconds = 0;
};

struct RunLog {
  std::vector<RunRecord> records;

  void write_csv(std::ostream& out) const {
    out << "iteration,train_loss,test_metric,seconds\n";
    out << std::setprecision(10);
    for (const auto& r : records)
      out << r.iteration << ',' << r.train_loss << ',' << r.test_metric << ',' << r.seconds << '\n';
  }
};

/// Fixed evaluation set packed into batches of at most `chunk` sequences.
template <typename Scalar>
struct TestSet {
  std::vector<SequenceBatch<Scalar>> batches;
  bool classification = false;
};

template <typename Scalar>
TestSet<Scalar> make_test_set(const Benchmark& bench, Index count, Rng& rng, Index chunk = 250) {
  auto samples = bench.test_set<Scalar>(count, rng);
  TestSet<Scalar> set;
  set.classification = bench.spec().classification();
  for (std::size_t i = 0; i < samples.size(); i += std::size_t(chunk)) {
    const auto end = std::min(samples.size(), i + std::size_t(chunk));
    set.batches.push_back(make_batch(std::vector<LabeledSequence<Scalar>>(samples.begin() + std::ptrdiff_t(i),
                                                                          samples.begin() + std::ptrdiff_t(end))));
  }
  return set;
}

/// MSE (regression) or accuracy (classification) over a test set.
template <typename Scalar>
Scalar evaluate(const Network<Scalar>& net, const TestSet<Scalar>& set) {
  Scalar total = 0;
  Index count = 0;
  for (const auto& batch : set.batches) {
    const Matrix<Scalar> logits = predict_batch(net, batch.inputs);
    const Scalar metric = set.classification ? accuracy<Scalar>(logits, batch.labels)
                                             : mse_loss<Scalar>(logits, batch.targets).value;
    total += metric * Scalar(batch.size());
    count += batch.size();
  }
  return total / Scalar(count);
}

template <typename Scalar>
struct TrainResult {
  Network<Scalar> net;
  RunLog log;
};

/// Seeds derived from config.seed: stream 1 initializes weights, stream 2
/// draws training batches, stream 3 builds the test set.
template <typename Scalar>
TrainResult<Scalar> train(const NetworkSpec& netspec, const Benchmark& bench, const TrainConfig& config,
                          const std::function<void(const RunRecord&)>& on_record = {}) {
  config.validate();
  netspec.validate();
  require(netspec.input_dim == bench.spec().input_dim() && netspec.output_dim == bench.spec().output_dim(),
          "train: network dimensions do not match the benchmark");
  const Rng root(config.seed);
  Rng init_rng = root.split(1), data_rng = root.split(2), test_rng = root.split(3);
  TrainResult<Scalar> result{Network<Scalar>::random(netspec, init_rng), {}};
  const TestSet<Scalar> test = make_test_set<Scalar>(bench, config.test_size, test_rng);
  AdamState<Scalar> adam;
  adam.config.lr = config.lr;

  const auto start = std::chrono::steady_clock::now();
  auto record = [&](long iteration, double train_loss) {
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    RunRecord r{iteration, train_loss, double(evaluate(result.net, test)), seconds};
    result.log.records.push_back(r);
    if (on_record) on_record(r);
  };

  double window_loss = 0;
  long window = 0;
  for (long it = 1; it <= config.iterations; ++it) {
    const auto batch = bench.batch<Scalar>(config.batch_size, data_rng);
    auto step = batch_gradient(result.net, batch, config.loss, config.workers);
    if (it == 1) record(0, double(step.loss));
    window_loss += double(step.loss);
    ++window;
    clip_global_norm(step.grads, Scalar(config.clip_norm));
    adam_step(result.net, step.grads, adam);
    if (it % config.eval_every == 0 || it == config.iterations) {
      record(it, window_loss / double(window));
      window_loss = 0;
      window = 0;
    }
  }
  return result;
}

}  // namespace brc
