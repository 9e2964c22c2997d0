#include "brc/cells.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace brc;

namespace {

std::vector<double*> slots(LayerParams<double>& layer) {
  std::vector<double*> out;
  for_each_tensor(layer, [&](std::string_view, auto& t) {
    for (Index i = 0; i < t.size(); ++i) out.push_back(t.data() + i);
  });
  return out;
}

struct StepCase {
  LayerParams<double> layer;
  MatrixXd x;
  CellState<double> prev;
  CellState<double> grad;
};

StepCase random_case(CellKind kind, Rng& rng) {
  const Index hidden = 1 + Index(rng.below(6)), input = 1 + Index(rng.below(4)), batch = 1 + Index(rng.below(3));
  StepCase c{make_layer<double>(kind, hidden, input, rng), uniform_matrix<double>(input, batch, -1.5, 1.5, rng), {}, {}};
  c.prev.h = uniform_matrix<double>(hidden, batch, -0.9, 0.9, rng);
  c.grad.h = uniform_matrix<double>(hidden, batch, -1, 1, rng);
  if (kind == CellKind::lstm) {
    c.prev.memory = uniform_matrix<double>(hidden, batch, -2, 2, rng);
    c.grad.memory = uniform_matrix<double>(hidden, batch, -1, 1, rng);
  }
  return c;
}

// <grad, next state>, the scalar whose derivatives backward() returns.
double pullback(const LayerParams<double>& layer, const MatrixXd& x, const CellState<double>& prev,
                const CellState<double>& grad) {
  const auto next = layer_forward(layer, x, prev).first;
  double s = grad.h.cwiseProduct(next.h).sum();
  if (grad.memory.size()) s += grad.memory.cwiseProduct(next.memory).sum();
  return s;
}

double check_step_gradients(StepCase c) {
  const double eps = 1e-5;
  auto cache = layer_forward(c.layer, c.x, c.prev).second;
  auto acc = zero_layer<double>(kind_of(c.layer), hidden_size(c.layer), input_size(c.layer));
  const StepGrad<double> g = layer_backward(c.layer, cache, c.grad, acc);

  std::vector<double> analytic, numeric;
  auto perturb = [&](double* slot) {
    const double saved = *slot;
    *slot = saved + eps;
    const double up = pullback(c.layer, c.x, c.prev, c.grad);
    *slot = saved - eps;
    const double down = pullback(c.layer, c.x, c.prev, c.grad);
    *slot = saved;
    numeric.push_back((up - down) / (2 * eps));
  };
  auto acc_slots = slots(acc);
  auto par_slots = slots(c.layer);
  for (std::size_t k = 0; k < par_slots.size(); ++k) {
    analytic.push_back(*acc_slots[k]);
    perturb(par_slots[k]);
  }
  for (Index i = 0; i < c.x.size(); ++i) {
    analytic.push_back(g.x.data()[i]);
    perturb(c.x.data() + i);
  }
  for (Index i = 0; i < c.prev.h.size(); ++i) {
    analytic.push_back(g.prev.h.data()[i]);
    perturb(c.prev.h.data() + i);
  }
  for (Index i = 0; i < c.prev.memory.size(); ++i) {
    analytic.push_back(g.prev.memory.data()[i]);
    perturb(c.prev.memory.data() + i);
  }
  return oracle::max_rel_error(analytic, numeric, 1e-8);
}

}  // namespace

TEST_SUITE("cells") {

TEST_CASE("bistable cell closed forms") {
  const CellState<double> zero{MatrixXd::Zero(1, 1), {}};
  auto p = BrcParams<double>::zeros(1, 1);
  CHECK(forward(p, MatrixXd(MatrixXd::Zero(1, 1)), zero).first.h(0, 0) == 0.0);

  p.U(0, 0) = 1.0;
  auto [next, cache] = forward(p, MatrixXd(MatrixXd::Ones(1, 1)), zero);
  CHECK(cache.a(0, 0) == 1.0);
  CHECK(cache.c(0, 0) == 0.5);
  CHECK(next.h(0, 0) == doctest::Approx(0.5 * std::tanh(1.0)).epsilon(1e-15));
  CHECK(next.h(0, 0) == doctest::Approx(0.380797077977882));

  // Hand differentiation at the origin: dh/dh_prev = c + (1 - c) a = 1.
  auto z = BrcParams<double>::zeros(1, 1);
  auto [n0, k0] = forward(z, MatrixXd(MatrixXd::Zero(1, 1)), zero);
  auto acc = BrcParams<double>::zeros(1, 1);
  CHECK(backward(z, k0, CellState<double>{MatrixXd::Ones(1, 1), {}}, acc).prev.h(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("nbrc with zero weights") {
  Rng rng(4);
  auto p = NbrcParams<double>::zeros(3, 2);
  const MatrixXd h = uniform_matrix<double>(3, 1, -1, 1, rng);
  const MatrixXd x = uniform_matrix<double>(2, 1, -1, 1, rng);
  const MatrixXd next = forward(p, x, CellState<double>{h, {}}).first.h;
  const MatrixXd expect = 0.5 * h.array() + 0.5 * h.array().tanh();
  CHECK((next - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("cells match scalar-loop evaluations") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = GruParams<double>::random(5, 3, rng);
    const auto b = BrcParams<double>::random(5, 3, rng);
    const VectorXd x = uniform_matrix<double>(3, 1, -2, 2, rng), h = uniform_matrix<double>(5, 1, -1, 1, rng);
    const CellState<double> prev{h, {}};
    CHECK((forward(g, MatrixXd(x), prev).first.h.col(0) - oracle::gru_step_loops(g, x, h)).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((forward(b, MatrixXd(x), prev).first.h.col(0) - oracle::brc_step_loops(b, x, h)).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("gru closed forms") {
  Rng rng(8);
  auto p = GruParams<double>::zeros(4, 2);
  const MatrixXd h = uniform_matrix<double>(4, 1, -1, 1, rng);
  auto [next, cache] = forward(p, uniform_matrix<double>(2, 1, -1, 1, rng), CellState<double>{h, {}});
  CHECK((cache.z.array() == 0.5).all());
  CHECK((cache.r.array() == 0.5).all());
  CHECK((next.h - 0.5 * h).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("origin is preserved by bias-free cells") {
  Rng rng(2);
  for (CellKind kind : {CellKind::brc, CellKind::nbrc, CellKind::gru, CellKind::rnn}) {
    const auto layer = make_layer<double>(kind, 6, 3, rng);
    CHECK(layer_forward(layer, MatrixXd(MatrixXd::Zero(3, 2)), zero_state(layer, 2)).first.h.isZero(0.0));
  }
}

TEST_CASE("gate ranges and bounded states") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto b = BrcParams<double>::random(8, 3, rng);
    const auto n = NbrcParams<double>::random(8, 3, rng);
    const auto g = GruParams<double>::random(8, 3, rng);
    const MatrixXd x = uniform_matrix<double>(3, 4, -3, 3, rng);
    const CellState<double> prev{uniform_matrix<double>(8, 4, -0.99, 0.99, rng), {}};
    for (const auto& k : {forward(b, x, prev).second, forward(n, x, prev).second}) {
      CHECK((k.a.array() > 0).all());
      CHECK((k.a.array() < 2).all());
      CHECK((k.c.array() > 0).all());
      CHECK((k.c.array() < 1).all());
    }
    auto [gh, gk] = forward(g, x, prev);
    CHECK((gk.z.array() > 0).all());
    CHECK((gk.z.array() < 1).all());
    CHECK((gk.r.array() > 0).all());
    CHECK((gk.r.array() < 1).all());
    CHECK((gh.h.array().abs() < 1).all());
  }
}

TEST_CASE("bistable coupling structure") {
  Rng rng(13);
  const auto b = BrcParams<double>::random(5, 2, rng);
  const MatrixXd x = uniform_matrix<double>(2, 1, -1, 1, rng);
  const MatrixXd h = uniform_matrix<double>(5, 1, -1, 1, rng);
  const MatrixXd base = forward(b, x, CellState<double>{h, {}}).first.h;
  MatrixXd hp = h;
  hp(2, 0) += 0.3;
  const MatrixXd moved = forward(b, x, CellState<double>{hp, {}}).first.h;
  for (Index i = 0; i < 5; ++i)
    if (i != 2) CHECK(moved(i, 0) == base(i, 0));

  const auto n = NbrcParams<double>::random(5, 2, rng);
  const MatrixXd a0 = forward(n, x, CellState<double>{h, {}}).second.a;
  const MatrixXd a1 = forward(n, x, CellState<double>{hp, {}}).second.a;
  for (Index i = 0; i < 5; ++i)
    if (i != 2) CHECK(a0(i, 0) != a1(i, 0));
}

TEST_CASE("state jacobian structure") {
  Rng rng(17);
  const VectorXd x = uniform_matrix<double>(3, 1, -1, 1, rng);
  const CellState<double> prev{uniform_matrix<double>(6, 1, -0.8, 0.8, rng), {}};
  auto off_diag = [](const MatrixXd& j) {
    MatrixXd o = j;
    o.diagonal().setZero();
    return o.cwiseAbs().maxCoeff();
  };
  CHECK(off_diag(state_jacobian(make_layer<double>(CellKind::brc, 6, 3, rng), x, prev)) < 1e-8);
  CHECK(off_diag(state_jacobian(make_layer<double>(CellKind::nbrc, 6, 3, rng), x, prev)) > 1e-3);
  auto g = GruParams<double>::random(6, 3, rng);
  g.Wz.setZero();
  g.Wr.setZero();
  g.Wh.setZero();
  CHECK(off_diag(state_jacobian(LayerParams<double>(g), x, prev)) < 1e-8);
}

TEST_CASE("shape and kind contracts") {
  Rng rng(1);
  const auto layer = make_layer<double>(CellKind::brc, 4, 2, rng);
  CHECK_THROWS_AS(layer_forward(layer, MatrixXd(MatrixXd::Zero(3, 1)), zero_state(layer, 1)), ContractError);
  CHECK_THROWS_AS(layer_forward(layer, MatrixXd(MatrixXd::Zero(2, 1)), CellState<double>{MatrixXd::Zero(3, 1), {}}),
                  ContractError);
  auto cache = layer_forward(layer, MatrixXd(MatrixXd::Zero(2, 1)), zero_state(layer, 1)).second;
  auto wrong = zero_layer<double>(CellKind::gru, 4, 2);
  CHECK_THROWS_AS(layer_backward(layer, cache, zero_state(layer, 1), wrong), ContractError);
  const auto gru = make_layer<double>(CellKind::gru, 4, 2, rng);
  auto acc = zero_layer<double>(CellKind::gru, 4, 2);
  CHECK_THROWS_AS(layer_backward(gru, cache, zero_state(gru, 1), acc), ContractError);
  CHECK(parse_cell_kind("nbrc") == CellKind::nbrc);
  CHECK_THROWS_AS(parse_cell_kind("mgu"), ContractError);
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  Rng rng(3);
  for (CellKind kind : kAllCellKinds) {
    auto c = random_case(kind, rng);
    c.grad.h.setZero();
    if (c.grad.memory.size()) c.grad.memory.setZero();
    auto cache = layer_forward(c.layer, c.x, c.prev).second;
    auto acc = zero_layer<double>(kind, hidden_size(c.layer), input_size(c.layer));
    const auto g = layer_backward(c.layer, cache, c.grad, acc);
    CHECK(g.x.isZero(0.0));
    CHECK(g.prev.h.isZero(0.0));
    for (double* s : slots(acc)) CHECK(*s == 0.0);
  }
}

TEST_CASE("single-step backward matches central differences") {
  for (CellKind kind : kAllCellKinds) {
    CAPTURE(to_string(kind));
    Rng rng(100 + int(kind));
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) worst = std::max(worst, check_step_gradients(random_case(kind, rng)));
    CHECK(worst < 1e-6);
  }
}

}
