// One-timestep forward and backward passes for every recurrent cell.
//
// All passes are batched: inputs are (features x batch) and states are
// (hidden x batch), one sequence per column. Backward passes are derived by
// hand and accumulate parameter gradients into a caller-owned, identically
// shaped parameter struct so BPTT can sum over timesteps without copies.
#pragma once

#include "brc/numerics.hpp"

#include <array>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

namespace brc {

enum class CellKind { brc, nbrc, gru, lstm, rnn };

inline constexpr std::array<CellKind, 5> kAllCellKinds = {CellKind::brc, CellKind::nbrc, CellKind::gru,
                                                          CellKind::lstm, CellKind::rnn};

inline std::string_view to_string(CellKind kind) {
  switch (kind) {
    case CellKind::brc: return "brc";
    case CellKind::nbrc: return "nbrc";
    case CellKind::gru: return "gru";
    case CellKind::lstm: return "lstm";
    case CellKind::rnn: return "rnn";
  }
  return "?";
}

inline CellKind parse_cell_kind(std::string_view name) {
  for (CellKind kind : kAllCellKinds)
    if (to_string(kind) == name) return kind;
  throw ContractError("unknown cell kind '" + std::string(name) + "'");
}

/// Recurrent state of one layer. `memory` is the LSTM cell state and stays
/// empty for every other cell.
template <typename Scalar>
struct CellState {
  Matrix<Scalar> h;
  Matrix<Scalar> memory;
};

/// Gradient flowing out of one backward step.
template <typename Scalar>
struct StepGrad {
  Matrix<Scalar> x;
  CellState<Scalar> prev;
};

template <typename P, typename F>
void for_each_tensor(P& params, F&& f) {
  std::remove_const_t<P>::visit(params, f);
}

// ---------------------------------------------------------------------------
// Caches

/// Shared by BRC and nBRC: both use the same state update.
template <typename Scalar>
struct BistableCache {
  Matrix<Scalar> x, h_prev;
  Matrix<Scalar> a;     // feedback gain, in (0, 2)
  Matrix<Scalar> c;     // update gate, in (0, 1)
  Matrix<Scalar> cand;  // tanh(U x + a * h_prev)
};

template <typename Scalar>
struct GruCache {
  Matrix<Scalar> x, h_prev;
  Matrix<Scalar> z, r;
  Matrix<Scalar> q;  // W_h h_prev
  Matrix<Scalar> cand;
};

template <typename Scalar>
struct LstmCache {
  Matrix<Scalar> x, h_prev, memory_prev;
  Matrix<Scalar> i, f, o, g;
  Matrix<Scalar> memory, tanh_memory;
};

template <typename Scalar>
struct RnnCache {
  Matrix<Scalar> x, h_prev;
  Matrix<Scalar> h;
};

template <typename Scalar>
using StepCache = std::variant<BistableCache<Scalar>, GruCache<Scalar>, LstmCache<Scalar>, RnnCache<Scalar>>;

namespace detail {

template <typename Scalar>
void check_step_inputs(Index hidden, Index input, const Matrix<Scalar>& x, const CellState<Scalar>& prev,
                       const char* cell, bool needs_memory = false) {
  require(x.rows() == input, std::string(cell) + ": input has " + std::to_string(x.rows()) +
                                 " rows, expected " + std::to_string(input));
  require(prev.h.rows() == hidden && prev.h.cols() == x.cols(),
          std::string(cell) + ": h_prev is " + shape_str(prev.h.rows(), prev.h.cols()) + ", expected " +
              shape_str(hidden, x.cols()));
  if (needs_memory)
    require(prev.memory.rows() == hidden && prev.memory.cols() == x.cols(),
            std::string(cell) + ": memory state shape mismatch");
}

template <typename Scalar>
void check_backward(Index hidden, Index input, const Matrix<Scalar>& x, const Matrix<Scalar>& h_prev,
                    const Matrix<Scalar>& grad_h, const char* cell) {
  require(x.rows() == input && h_prev.rows() == hidden,
          std::string(cell) + ": cache does not match parameter shapes");
  require(grad_h.rows() == hidden && grad_h.cols() == h_prev.cols(),
          std::string(cell) + ": upstream gradient is " + shape_str(grad_h.rows(), grad_h.cols()) +
              ", expected " + shape_str(hidden, h_prev.cols()));
}

template <typename Scalar>
bool same_shape(const Matrix<Scalar>& a, Index rows, Index cols) {
  return a.rows() == rows && a.cols() == cols;
}

template <typename Scalar>
bool same_shape(const Vector<Scalar>& a, Index rows, Index /*cols*/) {
  return a.rows() == rows;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// BRC: a = 1 + tanh(U_a x + w_a . h), c = sigmoid(U_c x + w_c . h),
//      h' = c . h + (1 - c) . tanh(U x + a . h)

template <typename Scalar>
struct BrcParams {
  using Cache = BistableCache<Scalar>;
  static constexpr CellKind kind = CellKind::brc;

  Matrix<Scalar> U, Ua, Uc;  // hidden x input
  Vector<Scalar> wa, wc;     // hidden

  Index hidden() const { return U.rows(); }
  Index input() const { return U.cols(); }

  static BrcParams zeros(Index hidden, Index input) {
    return {Matrix<Scalar>::Zero(hidden, input), Matrix<Scalar>::Zero(hidden, input),
            Matrix<Scalar>::Zero(hidden, input), Vector<Scalar>::Zero(hidden), Vector<Scalar>::Zero(hidden)};
  }

  static BrcParams random(Index hidden, Index input, Rng& rng) {
    BrcParams p;
    p.U = glorot_init<Scalar>(hidden, input, rng);
    p.Ua = glorot_init<Scalar>(hidden, input, rng);
    p.Uc = glorot_init<Scalar>(hidden, input, rng);
    p.wa = uniform_vector<Scalar>(hidden, -1, 1, rng);
    p.wc = uniform_vector<Scalar>(hidden, -1, 1, rng);
    return p;
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("U", self.U);
    f("U_a", self.Ua);
    f("U_c", self.Uc);
    f("w_a", self.wa);
    f("w_c", self.wc);
  }
};

// nBRC: same update as BRC with a = 1 + tanh(U_a x + W_a h),
//       c = sigmoid(U_c x + W_c h).
template <typename Scalar>
struct NbrcParams {
  using Cache = BistableCache<Scalar>;
  static constexpr CellKind kind = CellKind::nbrc;

  Matrix<Scalar> U, Ua, Uc;  // hidden x input
  Matrix<Scalar> Wa, Wc;     // hidden x hidden

  Index hidden() const { return U.rows(); }
  Index input() const { return U.cols(); }

  static NbrcParams zeros(Index hidden, Index input) {
    return {Matrix<Scalar>::Zero(hidden, input), Matrix<Scalar>::Zero(hidden, input),
            Matrix<Scalar>::Zero(hidden, input), Matrix<Scalar>::Zero(hidden, hidden),
            Matrix<Scalar>::Zero(hidden, hidden)};
  }

  static NbrcParams random(Index hidden, Index input, Rng& rng) {
    NbrcParams p;
    p.U = glorot_init<Scalar>(hidden, input, rng);
    p.Ua = glorot_init<Scalar>(hidden, input, rng);
    p.Uc = glorot_init<Scalar>(hidden, input, rng);
    p.Wa = glorot_init<Scalar>(hidden, hidden, rng);
    p.Wc = glorot_init<Scalar>(hidden, hidden, rng);
    return p;
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("U", self.U);
    f("U_a", self.Ua);
    f("U_c", self.Uc);
    f("W_a", self.Wa);
    f("W_c", self.Wc);
  }
};

namespace detail {

// Shared tail of the BRC/nBRC forward pass once the gate pre-activations exist.
template <typename Scalar>
std::pair<CellState<Scalar>, BistableCache<Scalar>> bistable_update(const Matrix<Scalar>& U,
                                                                  const Matrix<Scalar>& x,
                                                                  const Matrix<Scalar>& h_prev,
                                                                  const Matrix<Scalar>& pre_a,
                                                                  const Matrix<Scalar>& pre_c) {
  BistableCache<Scalar> cache;
  cache.x = x;
  cache.h_prev = h_prev;
  cache.a = (Scalar(1) + tanh_array(pre_a.array())).matrix();
  cache.c = sigmoid_map(pre_c);
  Matrix<Scalar> pre = U * x;
  pre.array() += cache.a.array() * h_prev.array();
  cache.cand = tanh_map(pre);
  CellState<Scalar> next;
  next.h = (cache.c.array() * h_prev.array() + (Scalar(1) - cache.c.array()) * cache.cand.array()).matrix();
  return {std::move(next), std::move(cache)};
}

// Gradients of the shared update w.r.t. U x, the gate pre-activations and the
// direct h_prev paths (c . h_prev and a . h_prev).
template <typename Scalar>
struct BistableBackprop {
  Matrix<Scalar> d_pre;    // w.r.t. U x + a . h_prev
  Matrix<Scalar> d_pre_a;  // w.r.t. the argument of tanh in a
  Matrix<Scalar> d_pre_c;  // w.r.t. the argument of sigmoid in c
  Matrix<Scalar> d_h_prev; // direct paths only
};

template <typename Scalar>
BistableBackprop<Scalar> bistable_backprop(const BistableCache<Scalar>& k, const Matrix<Scalar>& grad_h) {
  BistableBackprop<Scalar> out;
  const auto c = k.c.array();
  const auto a = k.a.array();
  const auto cand = k.cand.array();
  const auto h = k.h_prev.array();
  const auto g = grad_h.array();
  out.d_pre = (g * (Scalar(1) - c) * (Scalar(1) - cand.square())).matrix();
  const auto d_pre = out.d_pre.array();
  out.d_pre_a = (d_pre * h * (Scalar(1) - (a - Scalar(1)).square())).matrix();
  out.d_pre_c = (g * (h - cand) * c * (Scalar(1) - c)).matrix();
  out.d_h_prev = (g * c + d_pre * a).matrix();
  return out;
}

}  // namespace detail

template <typename Scalar>
std::pair<CellState<Scalar>, BistableCache<Scalar>> forward(const BrcParams<Scalar>& p, const Matrix<Scalar>& x,
                                                          const CellState<Scalar>& prev) {
  detail::check_step_inputs(p.hidden(), p.input(), x, prev, "brc");
  Matrix<Scalar> pre_a = p.Ua * x;
  pre_a += p.wa.asDiagonal() * prev.h;
  Matrix<Scalar> pre_c = p.Uc * x;
  pre_c += p.wc.asDiagonal() * prev.h;
  return detail::bistable_update(p.U, x, prev.h, pre_a, pre_c);
}

template <typename Scalar>
StepGrad<Scalar> backward(const BrcParams<Scalar>& p, const BistableCache<Scalar>& k, const CellState<Scalar>& grad,
                          BrcParams<Scalar>& acc) {
  detail::check_backward(p.hidden(), p.input(), k.x, k.h_prev, grad.h, "brc");
  auto bp = detail::bistable_backprop(k, grad.h);
  acc.U.noalias() += bp.d_pre * k.x.transpose();
  acc.Ua.noalias() += bp.d_pre_a * k.x.transpose();
  acc.Uc.noalias() += bp.d_pre_c * k.x.transpose();
  acc.wa += (bp.d_pre_a.array() * k.h_prev.array()).matrix().rowwise().sum();
  acc.wc += (bp.d_pre_c.array() * k.h_prev.array()).matrix().rowwise().sum();
  StepGrad<Scalar> out;
  out.x.noalias() = p.U.transpose() * bp.d_pre;
  out.x.noalias() += p.Ua.transpose() * bp.d_pre_a;
  out.x.noalias() += p.Uc.transpose() * bp.d_pre_c;
  out.prev.h = std::move(bp.d_h_prev);
  out.prev.h += p.wa.asDiagonal() * bp.d_pre_a;
  out.prev.h += p.wc.asDiagonal() * bp.d_pre_c;
  return out;
}

template <typename Scalar>
std::pair<CellState<Scalar>, BistableCache<Scalar>> forward(const NbrcParams<Scalar>& p, const Matrix<Scalar>& x,
                                                          const CellState<Scalar>& prev) {
  detail::check_step_inputs(p.hidden(), p.input(), x, prev, "nbrc");
  Matrix<Scalar> pre_a = p.Ua * x;
  pre_a.noalias() += p.Wa * prev.h;
  Matrix<Scalar> pre_c = p.Uc * x;
  pre_c.noalias() += p.Wc * prev.h;
  return detail::bistable_update(p.U, x, prev.h, pre_a, pre_c);
}

template <typename Scalar>
StepGrad<Scalar> backward(const NbrcParams<Scalar>& p, const BistableCache<Scalar>& k,
                          const CellState<Scalar>& grad, NbrcParams<Scalar>& acc) {
  detail::check_backward(p.hidden(), p.input(), k.x, k.h_prev, grad.h, "nbrc");
  auto bp = detail::bistable_backprop(k, grad.h);
  acc.U.noalias() += bp.d_pre * k.x.transpose();
  acc.Ua.noalias() += bp.d_pre_a * k.x.transpose();
  acc.Uc.noalias() += bp.d_pre_c * k.x.transpose();
  acc.Wa.noalias() += bp.d_pre_a * k.h_prev.transpose();
  acc.Wc.noalias() += bp.d_pre_c * k.h_prev.transpose();
  StepGrad<Scalar> out;
  out.x.noalias() = p.U.transpose() * bp.d_pre;
  out.x.noalias() += p.Ua.transpose() * bp.d_pre_a;
  out.x.noalias() += p.Uc.transpose() * bp.d_pre_c;
  out.prev.h = std::move(bp.d_h_prev);
  out.prev.h.noalias() += p.Wa.transpose() * bp.d_pre_a;
  out.prev.h.noalias() += p.Wc.transpose() * bp.d_pre_c;
  return out;
}

// ---------------------------------------------------------------------------
// GRU: z = sigmoid(U_z x + W_z h), r = sigmoid(U_r x + W_r h),
//      h' = z . h + (1 - z) . tanh(U_h x + r . (W_h h))

template <typename Scalar>
struct GruParams {
  using Cache = GruCache<Scalar>;
  static constexpr CellKind kind = CellKind::gru;

  Matrix<Scalar> Uz, Ur, Uh;  // hidden x input
  Matrix<Scalar> Wz, Wr, Wh;  // hidden x hidden

  Index hidden() const { return Uz.rows(); }
  Index input() const { return Uz.cols(); }

  static GruParams zeros(Index hidden, Index input) {
    return {Matrix<Scalar>::Zero(hidden, input),  Matrix<Scalar>::Zero(hidden, input),
            Matrix<Scalar>::Zero(hidden, input),  Matrix<Scalar>::Zero(hidden, hidden),
            Matrix<Scalar>::Zero(hidden, hidden), Matrix<Scalar>::Zero(hidden, hidden)};
  }

  static GruParams random(Index hidden, Index input, Rng& rng) {
    GruParams p;
    p.Uz = glorot_init<Scalar>(hidden, input, rng);
    p.Ur = glorot_init<Scalar>(hidden, input, rng);
    p.Uh = glorot_init<Scalar>(hidden, input, rng);
    p.Wz = glorot_init<Scalar>(hidden, hidden, rng);
    p.Wr = glorot_init<Scalar>(hidden, hidden, rng);
    p.Wh = glorot_init<Scalar>(hidden, hidden, rng);
    return p;
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("U_z", self.Uz);
    f("U_r", self.Ur);
    f("U_h", self.Uh);
    f("W_z", self.Wz);
    f("W_r", self.Wr);
    f("W_h", self.Wh);
  }
};

template <typename Scalar>
std::pair<CellState<Scalar>, GruCache<Scalar>> forward(const GruParams<Scalar>& p, const Matrix<Scalar>& x,
                                                     const CellState<Scalar>& prev) {
  detail::check_step_inputs(p.hidden(), p.input(), x, prev, "gru");
  GruCache<Scalar> k;
  k.x = x;
  k.h_prev = prev.h;
  Matrix<Scalar> pre = p.Uz * x;
  pre.noalias() += p.Wz * prev.h;
  k.z = sigmoid_map(pre);
  pre.noalias() = p.Ur * x;
  pre.noalias() += p.Wr * prev.h;
  k.r = sigmoid_map(pre);
  k.q.noalias() = p.Wh * prev.h;
  pre.noalias() = p.Uh * x;
  pre.array() += k.r.array() * k.q.array();
  k.cand = tanh_map(pre);
  CellState<Scalar> next;
  next.h = (k.z.array() * prev.h.array() + (Scalar(1) - k.z.array()) * k.cand.array()).matrix();
  return {std::move(next), std::move(k)};
}

template <typename Scalar>
StepGrad<Scalar> backward(const GruParams<Scalar>& p, const GruCache<Scalar>& k, const CellState<Scalar>& grad,
                          GruParams<Scalar>& acc) {
  detail::check_backward(p.hidden(), p.input(), k.x, k.h_prev, grad.h, "gru");
  const auto g = grad.h.array();
  const auto z = k.z.array();
  const auto r = k.r.array();
  const Matrix<Scalar> d_pre_h = (g * (Scalar(1) - z) * (Scalar(1) - k.cand.array().square())).matrix();
  const Matrix<Scalar> d_q = (d_pre_h.array() * r).matrix();
  const Matrix<Scalar> d_pre_r = (d_pre_h.array() * k.q.array() * r * (Scalar(1) - r)).matrix();
  const Matrix<Scalar> d_pre_z = (g * (k.h_prev.array() - k.cand.array()) * z * (Scalar(1) - z)).matrix();

  acc.Uz.noalias() += d_pre_z * k.x.transpose();
  acc.Ur.noalias() += d_pre_r * k.x.transpose();
  acc.Uh.noalias() += d_pre_h * k.x.transpose();
  acc.Wz.noalias() += d_pre_z * k.h_prev.transpose();
  acc.Wr.noalias() += d_pre_r * k.h_prev.transpose();
  acc.Wh.noalias() += d_q * k.h_prev.transpose();

  StepGrad<Scalar> out;
  out.x.noalias() = p.Uz.transpose() * d_pre_z;
  out.x.noalias() += p.Ur.transpose() * d_pre_r;
  out.x.noalias() += p.Uh.transpose() * d_pre_h;
  out.prev.h = (g * z).matrix();
  out.prev.h.noalias() += p.Wz.transpose() * d_pre_z;
  out.prev.h.noalias() += p.Wr.transpose() * d_pre_r;
  out.prev.h.noalias() += p.Wh.transpose() * d_q;
  return out;
}

// ---------------------------------------------------------------------------
// LSTM, standard formulation with biases:
//   i, f, o = sigmoid(U_* x + W_* h + b_*), g = tanh(U_g x + W_g h + b_g)
//   m' = f . m + i . g,  h' = o . tanh(m')

template <typename Scalar>
struct LstmParams {
  using Cache = LstmCache<Scalar>;
  static constexpr CellKind kind = CellKind::lstm;

  Matrix<Scalar> Ui, Uf, Uo, Ug;  // hidden x input
  Matrix<Scalar> Wi, Wf, Wo, Wg;  // hidden x hidden
  Vector<Scalar> bi, bf, bo, bg;

  Index hidden() const { return Ui.rows(); }
  Index input() const { return Ui.cols(); }

  static LstmParams zeros(Index hidden, Index input) {
    LstmParams p;
    for (auto* m : {&p.Ui, &p.Uf, &p.Uo, &p.Ug}) *m = Matrix<Scalar>::Zero(hidden, input);
    for (auto* m : {&p.Wi, &p.Wf, &p.Wo, &p.Wg}) *m = Matrix<Scalar>::Zero(hidden, hidden);
    for (auto* b : {&p.bi, &p.bf, &p.bo, &p.bg}) *b = Vector<Scalar>::Zero(hidden);
    return p;
  }

  static LstmParams random(Index hidden, Index input, Rng& rng) {
    LstmParams p = zeros(hidden, input);
    for (auto* m : {&p.Ui, &p.Uf, &p.Uo, &p.Ug}) *m = glorot_init<Scalar>(hidden, input, rng);
    for (auto* m : {&p.Wi, &p.Wf, &p.Wo, &p.Wg}) *m = glorot_init<Scalar>(hidden, hidden, rng);
    p.bf.setOnes();
    return p;
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("U_i", self.Ui);
    f("U_f", self.Uf);
    f("U_o", self.Uo);
    f("U_g", self.Ug);
    f("W_i", self.Wi);
    f("W_f", self.Wf);
    f("W_o", self.Wo);
    f("W_g", self.Wg);
    f("b_i", self.bi);
    f("b_f", self.bf);
    f("b_o", self.bo);
    f("b_g", self.bg);
  }
};

template <typename Scalar>
std::pair<CellState<Scalar>, LstmCache<Scalar>> forward(const LstmParams<Scalar>& p, const Matrix<Scalar>& x,
                                                      const CellState<Scalar>& prev) {
  detail::check_step_inputs(p.hidden(), p.input(), x, prev, "lstm", true);
  LstmCache<Scalar> k;
  k.x = x;
  k.h_prev = prev.h;
  k.memory_prev = prev.memory;
  auto gate = [&](const Matrix<Scalar>& U, const Matrix<Scalar>& W, const Vector<Scalar>& b) {
    Matrix<Scalar> pre = U * x;
    pre.noalias() += W * prev.h;
    pre.colwise() += b;
    return pre;
  };
  k.i = sigmoid_map(gate(p.Ui, p.Wi, p.bi));
  k.f = sigmoid_map(gate(p.Uf, p.Wf, p.bf));
  k.o = sigmoid_map(gate(p.Uo, p.Wo, p.bo));
  k.g = tanh_map(gate(p.Ug, p.Wg, p.bg));
  k.memory = (k.f.array() * prev.memory.array() + k.i.array() * k.g.array()).matrix();
  k.tanh_memory = tanh_map(k.memory);
  CellState<Scalar> next;
  next.h = (k.o.array() * k.tanh_memory.array()).matrix();
  next.memory = k.memory;
  return {std::move(next), std::move(k)};
}

template <typename Scalar>
StepGrad<Scalar> backward(const LstmParams<Scalar>& p, const LstmCache<Scalar>& k, const CellState<Scalar>& grad,
                          LstmParams<Scalar>& acc) {
  detail::check_backward(p.hidden(), p.input(), k.x, k.h_prev, grad.h, "lstm");
  require(grad.memory.rows() == grad.h.rows() && grad.memory.cols() == grad.h.cols(),
          "lstm: memory gradient shape mismatch");
  const auto gh = grad.h.array();
  const Matrix<Scalar> d_memory =
      (grad.memory.array() + gh * k.o.array() * (Scalar(1) - k.tanh_memory.array().square())).matrix();
  const auto dm = d_memory.array();
  const Matrix<Scalar> d_pre_i = (dm * k.g.array() * k.i.array() * (Scalar(1) - k.i.array())).matrix();
  const Matrix<Scalar> d_pre_f = (dm * k.memory_prev.array() * k.f.array() * (Scalar(1) - k.f.array())).matrix();
  const Matrix<Scalar> d_pre_o = (gh * k.tanh_memory.array() * k.o.array() * (Scalar(1) - k.o.array())).matrix();
  const Matrix<Scalar> d_pre_g = (dm * k.i.array() * (Scalar(1) - k.g.array().square())).matrix();

  StepGrad<Scalar> out;
  out.x = Matrix<Scalar>::Zero(k.x.rows(), k.x.cols());
  out.prev.h = Matrix<Scalar>::Zero(k.h_prev.rows(), k.h_prev.cols());
  auto apply = [&](const Matrix<Scalar>& d, const Matrix<Scalar>& U, const Matrix<Scalar>& W, Matrix<Scalar>& dU,
                   Matrix<Scalar>& dW, Vector<Scalar>& db) {
    dU.noalias() += d * k.x.transpose();
    dW.noalias() += d * k.h_prev.transpose();
    db += d.rowwise().sum();
    out.x.noalias() += U.transpose() * d;
    out.prev.h.noalias() += W.transpose() * d;
  };
  apply(d_pre_i, p.Ui, p.Wi, acc.Ui, acc.Wi, acc.bi);
  apply(d_pre_f, p.Uf, p.Wf, acc.Uf, acc.Wf, acc.bf);
  apply(d_pre_o, p.Uo, p.Wo, acc.Uo, acc.Wo, acc.bo);
  apply(d_pre_g, p.Ug, p.Wg, acc.Ug, acc.Wg, acc.bg);
  out.prev.memory = (dm * k.f.array()).matrix();
  return out;
}

// ---------------------------------------------------------------------------
// Vanilla RNN: h' = tanh(U x + W h)

template <typename Scalar>
struct RnnParams {
  using Cache = RnnCache<Scalar>;
  static constexpr CellKind kind = CellKind::rnn;

  Matrix<Scalar> U;  // hidden x input
  Matrix<Scalar> W;  // hidden x hidden

  Index hidden() const { return U.rows(); }
  Index input() const { return U.cols(); }

  static RnnParams zeros(Index hidden, Index input) {
    return {Matrix<Scalar>::Zero(hidden, input), Matrix<Scalar>::Zero(hidden, hidden)};
  }

  static RnnParams random(Index hidden, Index input, Rng& rng) {
    RnnParams p;
    p.U = glorot_init<Scalar>(hidden, input, rng);
    p.W = glorot_init<Scalar>(hidden, hidden, rng);
    return p;
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("U", self.U);
    f("W", self.W);
  }
};

template <typename Scalar>
std::pair<CellState<Scalar>, RnnCache<Scalar>> forward(const RnnParams<Scalar>& p, const Matrix<Scalar>& x,
                                                     const CellState<Scalar>& prev) {
  detail::check_step_inputs(p.hidden(), p.input(), x, prev, "rnn");
  RnnCache<Scalar> k;
  k.x = x;
  k.h_prev = prev.h;
  Matrix<Scalar> pre = p.U * x;
  pre.noalias() += p.W * prev.h;
  k.h = tanh_map(pre);
  CellState<Scalar> next;
  next.h = k.h;
  return {std::move(next), std::move(k)};
}

template <typename Scalar>
StepGrad<Scalar> backward(const RnnParams<Scalar>& p, const RnnCache<Scalar>& k, const CellState<Scalar>& grad,
                          RnnParams<Scalar>& acc) {
  detail::check_backward(p.hidden(), p.input(), k.x, k.h_prev, grad.h, "rnn");
  const Matrix<Scalar> d_pre = (grad.h.array() * (Scalar(1) - k.h.array().square())).matrix();
  acc.U.noalias() += d_pre * k.x.transpose();
  acc.W.noalias() += d_pre * k.h_prev.transpose();
  StepGrad<Scalar> out;
  out.x.noalias() = p.U.transpose() * d_pre;
  out.prev.h.noalias() = p.W.transpose() * d_pre;
  return out;
}

// ---------------------------------------------------------------------------
// Runtime dispatch over cell kinds.

template <typename Scalar>
using LayerParams =
    std::variant<BrcParams<Scalar>, NbrcParams<Scalar>, GruParams<Scalar>, LstmParams<Scalar>, RnnParams<Scalar>>;

template <typename Scalar>
CellKind kind_of(const LayerParams<Scalar>& layer) {
  return std::visit([](const auto& p) { return std::decay_t<decltype(p)>::kind; }, layer);
}

template <typename Scalar>
Index hidden_size(const LayerParams<Scalar>& layer) {
  return std::visit([](const auto& p) { return p.hidden(); }, layer);
}

template <typename Scalar>
Index input_size(const LayerParams<Scalar>& layer) {
  return std::visit([](const auto& p) { return p.input(); }, layer);
}

template <typename Scalar>
LayerParams<Scalar> make_layer(CellKind kind, Index hidden, Index input, Rng& rng) {
  switch (kind) {
    case CellKind::brc: return BrcParams<Scalar>::random(hidden, input, rng);
    case CellKind::nbrc: return NbrcParams<Scalar>::random(hidden, input, rng);
    case CellKind::gru: return GruParams<Scalar>::random(hidden, input, rng);
    case CellKind::lstm: return LstmParams<Scalar>::random(hidden, input, rng);
    case CellKind::rnn: return RnnParams<Scalar>::random(hidden, input, rng);
  }
  throw ContractError("make_layer: bad cell kind");
}

template <typename Scalar>
LayerParams<Scalar> zero_layer(CellKind kind, Index hidden, Index input) {
  switch (kind) {
    case CellKind::brc: return BrcParams<Scalar>::zeros(hidden, input);
    case CellKind::nbrc: return NbrcParams<Scalar>::zeros(hidden, input);
    case CellKind::gru: return GruParams<Scalar>::zeros(hidden, input);
    case CellKind::lstm: return LstmParams<Scalar>::zeros(hidden, input);
    case CellKind::rnn: return RnnParams<Scalar>::zeros(hidden, input);
  }
  throw ContractError("zero_layer: bad cell kind");
}

/// Zero state for `batch` sequences; carries a memory block only for LSTM.
template <typename Scalar>
CellState<Scalar> zero_state(const LayerParams<Scalar>& layer, Index batch) {
  CellState<Scalar> s;
  s.h = Matrix<Scalar>::Zero(hidden_size(layer), batch);
  if (kind_of(layer) == CellKind::lstm) s.memory = Matrix<Scalar>::Zero(hidden_size(layer), batch);
  return s;
}

template <typename Scalar>
std::pair<CellState<Scalar>, StepCache<Scalar>> layer_forward(const LayerParams<Scalar>& layer,
                                                             const Matrix<Scalar>& x,
                                                             const CellState<Scalar>& prev) {
  return std::visit(
      [&](const auto& p) -> std::pair<CellState<Scalar>, StepCache<Scalar>> {
        auto [next, cache] = forward(p, x, prev);
        return {std::move(next), StepCache<Scalar>(std::move(cache))};
      },
      layer);
}

template <typename Scalar>
StepGrad<Scalar> layer_backward(const LayerParams<Scalar>& layer, const StepCache<Scalar>& cache,
                                const CellState<Scalar>& grad, LayerParams<Scalar>& acc) {
  return std::visit(
      [&](const auto& p) -> StepGrad<Scalar> {
        using P = std::decay_t<decltype(p)>;
        auto* k = std::get_if<typename P::Cache>(&cache);
        auto* g = std::get_if<P>(&acc);
        require(k != nullptr, std::string(to_string(P::kind)) + ": cache from a different cell kind");
        require(g != nullptr, std::string(to_string(P::kind)) + ": gradient holder of a different cell kind");
        return backward(p, *k, grad, *g);
      },
      layer);
}

template <typename Scalar, typename F>
void for_each_tensor(LayerParams<Scalar>& layer, F&& f) {
  std::visit([&](auto& p) { for_each_tensor(p, f); }, layer);
}

template <typename Scalar, typename F>
void for_each_tensor(const LayerParams<Scalar>& layer, F&& f) {
  std::visit([&](const auto& p) { for_each_tensor(p, f); }, layer);
}

/// Numerical Jacobian dh_t/dh_{t-1} of a single sequence by central
/// differences. For LSTM the memory state is held fixed at `prev.memory`.
template <typename Scalar>
Matrix<Scalar> state_jacobian(const LayerParams<Scalar>& layer, const Vector<Scalar>& x,
                              const CellState<Scalar>& prev, Scalar eps = Scalar(1e-5)) {
  const Index n = hidden_size(layer);
  require(prev.h.rows() == n && prev.h.cols() == 1, "state_jacobian: h_prev must be a single column");
  Matrix<Scalar> jac(n, n);
  const Matrix<Scalar> xm = x;
  for (Index j = 0; j < n; ++j) {
    CellState<Scalar> plus = prev, minus = prev;
    plus.h(j, 0) += eps;
    minus.h(j, 0) -= eps;
    const Matrix<Scalar> hp = layer_forward(layer, xm, plus).first.h;
    const Matrix<Scalar> hm = layer_forward(layer, xm, minus).first.h;
    jac.col(j) = (hp - hm).col(0) / (Scalar(2) * eps);
  }
  return jac;
}

}  // namespace brc
