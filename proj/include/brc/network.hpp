// Stacked recurrent layers with a linear readout on the final hidden state of
// the deepest layer, and backpropagation through time over the whole stack.
#pragma once

#include "brc/cells.hpp"

#include <string>
#include <vector>

namespace brc {

enum class OutputHead { linear, softmax };

struct NetworkSpec {
  CellKind cell = CellKind::brc;
  std::vector<Index> layer_sizes;
  Index input_dim = 1;
  Index output_dim = 1;
  OutputHead head = OutputHead::linear;

  void validate() const {
    require(!layer_sizes.empty(), "network needs at least one layer");
    for (Index n : layer_sizes) require(n >= 1, "layer sizes must be positive");
    require(input_dim >= 1 && output_dim >= 1, "input and output dims must be positive");
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

template <typename Scalar>
struct Network {
  NetworkSpec spec;
  std::vector<LayerParams<Scalar>> layers;
  Matrix<Scalar> readout;  // output_dim x last hidden
  Vector<Scalar> bias;     // output_dim

  static Network random(const NetworkSpec& spec, Rng& rng) {
    spec.validate();
    Network net;
    net.spec = spec;
    Index input = spec.input_dim;
    for (Index hidden : spec.layer_sizes) {
      net.layers.push_back(make_layer<Scalar>(spec.cell, hidden, input, rng));
      input = hidden;
    }
    net.readout = glorot_init<Scalar>(spec.output_dim, input, rng);
    net.bias = Vector<Scalar>::Zero(spec.output_dim);
    return net;
  }

  /// All-zero parameters with the shapes of `spec`; also the gradient holder.
  static Network zeros(const NetworkSpec& spec) {
    spec.validate();
    Network net;
    net.spec = spec;
    Index input = spec.input_dim;
    for (Index hidden : spec.layer_sizes) {
      net.layers.push_back(zero_layer<Scalar>(spec.cell, hidden, input));
      input = hidden;
    }
    net.readout = Matrix<Scalar>::Zero(spec.output_dim, input);
    net.bias = Vector<Scalar>::Zero(spec.output_dim);
    return net;
  }

  Index last_hidden() const { return spec.layer_sizes.back(); }

  /// Calls f(name, tensor) for every parameter in a fixed order. Names are
  /// "layer<i>.<param>", "readout.W" and "readout.b".
  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      const std::string prefix = "layer" + std::to_string(i) + ".";
      for_each_tensor(self.layers[i], [&](std::string_view name, auto& t) { f(prefix + std::string(name), t); });
    }
    f(std::string("readout.W"), self.readout);
    f(std::string("readout.b"), self.bias);
  }

  Index parameter_count() const {
    Index n = 0;
    visit(*this, [&](const std::string&, const auto& t) { n += t.size(); });
    return n;
  }
};

/// Per-layer, per-timestep caches plus every hidden state, for one batch.
template <typename Scalar>
struct SequenceCache {
  Index batch = 0;
  std::vector<std::vector<StepCache<Scalar>>> steps;   // [layer][t]
  std::vector<std::vector<Matrix<Scalar>>> hidden;     // [layer][t], hidden x batch

  Index length() const { return steps.empty() ? 0 : Index(steps.front().size()); }
};

template <typename Scalar>
struct ForwardResult {
  Matrix<Scalar> logits;  // readout applied to the final hidden state, output_dim x batch
  Matrix<Scalar> output;  // logits, or column-wise softmax for a softmax head
  SequenceCache<Scalar> cache;

  /// [layer][t] hidden states, exposed for instrumentation.
  const std::vector<std::vector<Matrix<Scalar>>>& hidden_trace() const { return cache.hidden; }
};

template <typename Scalar>
Matrix<Scalar> softmax_columns(const Matrix<Scalar>& logits) {
  Matrix<Scalar> out(logits.rows(), logits.cols());
  for (Index j = 0; j < logits.cols(); ++j) {
    const Scalar top = logits.col(j).maxCoeff();
    out.col(j) = (logits.col(j).array() - top).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

/// Runs a batch of equal-length sequences. `inputs[t]` is input_dim x batch.
/// Every layer starts from the zero state.
template <typename Scalar>
ForwardResult<Scalar> forward_batch(const Network<Scalar>& net, const std::vector<Matrix<Scalar>>& inputs) {
  require(!inputs.empty(), "forward: sequence must have at least one step");
  const Index batch = inputs.front().cols();
  for (const auto& x : inputs)
    require(x.rows() == net.spec.input_dim && x.cols() == batch,
            "forward: input step is " + shape_str(x.rows(), x.cols()) + ", expected " +
                shape_str(net.spec.input_dim, batch));
  const std::size_t steps = inputs.size();
  ForwardResult<Scalar> result;
  auto& cache = result.cache;
  cache.batch = batch;
  cache.steps.resize(net.layers.size());
  cache.hidden.resize(net.layers.size());

  const std::vector<Matrix<Scalar>>* layer_in = &inputs;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    auto& caches = cache.steps[l];
    auto& hidden = cache.hidden[l];
    caches.reserve(steps);
    hidden.reserve(steps);
    CellState<Scalar> state = zero_state(layer, batch);
    for (std::size_t t = 0; t < steps; ++t) {
      auto [next, step_cache] = layer_forward(layer, (*layer_in)[t], state);
      caches.push_back(std::move(step_cache));
      hidden.push_back(next.h);
      state = std::move(next);
    }
    layer_in = &hidden;
  }
  result.logits = net.readout * cache.hidden.back().back();
  result.logits.colwise() += net.bias;
  result.output = net.spec.head == OutputHead::softmax ? softmax_columns(result.logits) : result.logits;
  return result;
}

/// Inference-only pass: returns logits without keeping step caches.
template <typename Scalar>
Matrix<Scalar> predict_batch(const Network<Scalar>& net, const std::vector<Matrix<Scalar>>& inputs) {
  require(!inputs.empty(), "predict: sequence must have at least one step");
  const Index batch = inputs.front().cols();
  std::vector<Matrix<Scalar>> current;
  const std::vector<Matrix<Scalar>>* layer_in = &inputs;
  for (const auto& layer : net.layers) {
    std::vector<Matrix<Scalar>> outputs;
    outputs.reserve(inputs.size());
    CellState<Scalar> state = zero_state(layer, batch);
    for (const auto& x : *layer_in) {
      require(x.cols() == batch && x.rows() == input_size(layer), "predict: input step shape mismatch");
      state = layer_forward(layer, x, state).first;
      outputs.push_back(state.h);
    }
    current = std::move(outputs);
    layer_in = &current;
  }
  Matrix<Scalar> logits = net.readout * current.back();
  logits.colwise() += net.bias;
  return logits;
}

/// BPTT. `grad_logits` is d(loss)/d(logits), output_dim x batch. When the loss
/// is the batch mean of per-sequence losses the returned gradients are the
/// mean of per-sequence gradients.
template <typename Scalar>
Network<Scalar> backward_batch(const Network<Scalar>& net, const SequenceCache<Scalar>& cache,
                               const Matrix<Scalar>& grad_logits) {
  require(cache.steps.size() == net.layers.size() && cache.length() >= 1,
          "backward: cache does not match network depth");
  require(grad_logits.rows() == net.spec.output_dim && grad_logits.cols() == cache.batch,
          "backward: gradient is " + shape_str(grad_logits.rows(), grad_logits.cols()) + ", expected " +
              shape_str(net.spec.output_dim, cache.batch));
  const std::size_t steps = std::size_t(cache.length());
  Network<Scalar> grads = Network<Scalar>::zeros(net.spec);
  const Matrix<Scalar>& top = cache.hidden.back().back();
  grads.readout.noalias() = grad_logits * top.transpose();
  grads.bias = grad_logits.rowwise().sum();

  // Gradient arriving at each timestep's output of the current layer from above.
  std::vector<Matrix<Scalar>> from_above(steps);
  from_above.back() = net.readout.transpose() * grad_logits;

  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const auto& layer = net.layers[l];
    require(cache.steps[l].size() == steps, "backward: ragged cache");
    CellState<Scalar> carry = zero_state(layer, cache.batch);
    std::vector<Matrix<Scalar>> to_below(l > 0 ? steps : 0);
    for (std::size_t t = steps; t-- > 0;) {
      if (from_above[t].size() != 0) carry.h += from_above[t];
      StepGrad<Scalar> g = layer_backward(layer, cache.steps[l][t], carry, grads.layers[l]);
      if (l > 0) to_below[t] = std::move(g.x);
      carry = std::move(g.prev);
    }
    from_above = std::move(to_below);
  }
  return grads;
}

/// Single sequence given as a (T x input_dim) matrix, one timestep per row.
template <typename Scalar>
std::vector<Matrix<Scalar>> sequence_steps(const Matrix<Scalar>& seq) {
  std::vector<Matrix<Scalar>> steps;
  steps.reserve(std::size_t(seq.rows()));
  for (Index t = 0; t < seq.rows(); ++t) steps.emplace_back(seq.row(t).transpose());
  return steps;
}

template <typename Scalar>
ForwardResult<Scalar> forward_sequence(const Network<Scalar>& net, const Matrix<Scalar>& seq) {
  require(seq.rows() >= 1, "forward_sequence: empty sequence");
  require(seq.cols() == net.spec.input_dim, "forward_sequence: sequence has " + std::to_string(seq.cols()) +
                                                " features, network expects " +
                                                std::to_string(net.spec.input_dim));
  return forward_batch(net, sequence_steps(seq));
}

template <typename Scalar>
Network<Scalar> backward_sequence(const Network<Scalar>& net, const SequenceCache<Scalar>& cache,
                                  const Vector<Scalar>& grad_output) {
  require(cache.batch == 1, "backward_sequence: cache holds a batch");
  return backward_batch(net, cache, Matrix<Scalar>(grad_output));
}

// Flat views used by the optimizer, gradient checks and serialization.

template <typename Scalar>
struct TensorView {
  std::string name;
  Scalar* data;
  Index rows, cols;
  Eigen::Map<Matrix<Scalar>> map() const { return {data, rows, cols}; }
  Index size() const { return rows * cols; }
};

template <typename Scalar>
std::vector<TensorView<Scalar>> tensor_views(Network<Scalar>& net) {
  std::vector<TensorView<Scalar>> views;
  Network<Scalar>::visit(net, [&](const std::string& name, auto& t) {
    views.push_back({name, t.data(), t.rows(), t.cols()});
  });
  return views;
}

template <typename Scalar>
struct ConstTensorView {
  std::string name;
  const Scalar* data;
  Index rows, cols;
  Eigen::Map<const Matrix<Scalar>> map() const { return {data, rows, cols}; }
  Index size() const { return rows * cols; }
};

template <typename Scalar>
std::vector<ConstTensorView<Scalar>> tensor_views(const Network<Scalar>& net) {
  std::vector<ConstTensorView<Scalar>> views;
  Network<Scalar>::visit(net, [&](const std::string& name, const auto& t) {
    views.push_back({name, t.data(), t.rows(), t.cols()});
  });
  return views;
}

template <typename Scalar>
Scalar squared_norm(const Network<Scalar>& net) {
  Scalar total = 0;
  Network<Scalar>::visit(net, [&](const std::string&, const auto& t) { total += t.squaredNorm(); });
  return total;
}

template <typename Scalar>
void scale(Network<Scalar>& net, Scalar factor) {
  Network<Scalar>::visit(net, [&](const std::string&, auto& t) { t *= factor; });
}

/// this += factor * other, shapes must agree.
template <typename Scalar>
void add_scaled(Network<Scalar>& acc, const Network<Scalar>& other, Scalar factor) {
  auto dst = tensor_views(acc);
  auto src = tensor_views(other);
  require(dst.size() == src.size(), "add_scaled: structure mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    require(dst[i].rows == src[i].rows && dst[i].cols == src[i].cols, "add_scaled: shape mismatch");
    dst[i].map() += factor * src[i].map();
  }
}

}  // namespace brc
