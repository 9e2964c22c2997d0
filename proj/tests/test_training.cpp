#include "brc/training.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <sstream>

using namespace brc;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(Index(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Central differences of a scalar function of a vector.
VectorXd fd(const std::function<double(const VectorXd&)>& f, VectorXd x) {
  VectorXd g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const double s = x(i);
    x(i) = s + 1e-6;
    const double up = f(x);
    x(i) = s - 1e-6;
    const double down = f(x);
    x(i) = s;
    g(i) = (up - down) / 2e-6;
  }
  return g;
}

std::vector<double> scalar_adam_run(double w, int steps, double lr, std::vector<double>* losses = nullptr) {
  AdamState<double> state;
  state.config.lr = lr;
  std::vector<double> path;
  for (int k = 0; k < steps; ++k) {
    double g = 2 * w;
    adam_step<double>({TensorView<double>{"w", &w, 1, 1}}, {ConstTensorView<double>{"w", &g, 1, 1}}, state);
    path.push_back(w);
    if (losses) losses->push_back(w * w);
  }
  return path;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("mse loss") {
  auto same = mse_loss<double>(vec({1, 2}), vec({1, 2}));
  CHECK(same.value == 0.0);
  CHECK(same.grad.isZero(0.0));
  auto l = mse_loss<double>(vec({1, 0}), vec({0, 0}));
  CHECK(l.value == 0.5);
  CHECK(l.grad(0, 0) == 1.0);
  CHECK(l.grad(1, 0) == 0.0);
  CHECK_THROWS_AS(mse_loss<double>(vec({1}), vec({1, 2})), ContractError);

  Rng rng(1);
  const VectorXd p = uniform_matrix<double>(5, 1, -2, 2, rng), t = uniform_matrix<double>(5, 1, -2, 2, rng);
  const VectorXd num = fd([&](const VectorXd& x) { return mse_loss<double>(x, t).value; }, p);
  CHECK((VectorXd(mse_loss<double>(p, t).grad) - num).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("cross entropy loss") {
  const VectorXd logits = vec({1.0, 2.0, 0.5});
  const double direct = -std::log(std::exp(2.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(0.5)));
  CHECK(cross_entropy_loss<double>(logits, 1).value == doctest::Approx(direct).epsilon(1e-14));
  const VectorXd num = fd([&](const VectorXd& x) { return cross_entropy_loss<double>(x, 2).value; }, logits);
  CHECK((VectorXd(cross_entropy_loss<double>(logits, 2).grad) - num).cwiseAbs().maxCoeff() < 1e-8);

  auto big = cross_entropy_loss<double>(vec({1000, 0, -1000}), 0);
  CHECK(std::isfinite(big.value));
  CHECK(big.value == doctest::Approx(0.0));
  CHECK(cross_entropy_loss<double>(vec({1000, 0}), 1).value == doctest::Approx(1000.0));
  CHECK_THROWS_AS(cross_entropy_loss<double>(logits, 3), ContractError);

  MatrixXd batch(3, 2);
  batch << 1, 0, 2, 0, 0.5, 3;
  const auto l = cross_entropy_loss<double>(batch, {1, 2});
  const double expect = 0.5 * (cross_entropy_loss<double>(VectorXd(batch.col(0)), 1).value +
                               cross_entropy_loss<double>(VectorXd(batch.col(1)), 2).value);
  CHECK(l.value == doctest::Approx(expect));
  CHECK(accuracy<double>(batch, {1, 2}) == 1.0);
  CHECK(accuracy<double>(batch, {0, 2}) == 0.5);
}

TEST_CASE("adam") {
  SUBCASE("zero gradient on a fresh state is the identity") {
    double w = 0.7, g = 0.0;
    AdamState<double> state;
    adam_step<double>({TensorView<double>{"w", &w, 1, 1}}, {ConstTensorView<double>{"w", &g, 1, 1}}, state);
    CHECK(w == 0.7);
    CHECK(state.step == 1);
  }
  SUBCASE("first step moves by about lr against the gradient sign") {
    for (double g0 : {3.0, -0.02, 1e-3}) {
      double w = 0.0, g = g0;
      AdamState<double> state;
      adam_step<double>({TensorView<double>{"w", &w, 1, 1}}, {ConstTensorView<double>{"w", &g, 1, 1}}, state);
      // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
      CHECK(w == doctest::Approx(-1e-3 * g0 / (std::abs(g0) + 1e-8)).epsilon(1e-12));
    }
  }
  SUBCASE("quadratic descent") {
    const auto path = scalar_adam_run(1.0, 10, 1e-3);
    for (std::size_t k = 1; k < path.size(); ++k) CHECK(std::abs(path[k]) < std::abs(path[k - 1]));
    std::vector<double> losses;
    scalar_adam_run(1.0, 50, 1e-3, &losses);
    for (std::size_t k = 3; k < losses.size(); ++k) CHECK(losses[k] < losses[k - 1]);
  }
  SUBCASE("shape mismatch") {
    double w[2] = {0, 0}, g[3] = {1, 1, 1};
    AdamState<double> state;
    CHECK_THROWS_AS(adam_step<double>({TensorView<double>{"w", w, 2, 1}}, {ConstTensorView<double>{"w", g, 3, 1}}, state),
                    ContractError);
  }
}

TEST_CASE("global norm clipping") {
  NetworkSpec spec;
  spec.cell = CellKind::rnn;
  spec.layer_sizes = {2};
  auto g = Network<double>::zeros(spec);
  g.bias(0) = 30;
  g.readout(0, 0) = 40;
  CHECK(clip_global_norm(g, 5.0) == doctest::Approx(50.0));
  CHECK(std::sqrt(squared_norm(g)) == doctest::Approx(5.0));
  CHECK(g.bias(0) == doctest::Approx(3.0));
  CHECK(clip_global_norm(g, 10.0) == doctest::Approx(5.0));
  CHECK(g.bias(0) == doctest::Approx(3.0));
}

TEST_CASE("train loop bookkeeping and determinism") {
  NetworkSpec spec;
  spec.cell = CellKind::nbrc;
  spec.layer_sizes = {6};
  const Benchmark bench(SampleSpec{BenchmarkKind::copy_first, 8});
  TrainConfig cfg;
  cfg.iterations = 1;
  cfg.batch_size = 4;
  cfg.test_size = 20;
  cfg.seed = 3;
  const auto one = train<double>(spec, bench, cfg);
  REQUIRE(one.log.records.size() == 2);
  CHECK(one.log.records[0].iteration == 0);
  CHECK(one.log.records[1].iteration == 1);

  cfg.iterations = 25;
  cfg.eval_every = 10;
  std::vector<long> seen;
  const auto a = train<double>(spec, bench, cfg, [&](const RunRecord& r) { seen.push_back(r.iteration); });
  const auto b = train<double>(spec, bench, cfg);
  CHECK(seen == std::vector<long>{0, 10, 20, 25});
  REQUIRE(a.log.records.size() == b.log.records.size());
  for (std::size_t i = 0; i < a.log.records.size(); ++i) {
    CHECK(a.log.records[i].train_loss == b.log.records[i].train_loss);
    CHECK(a.log.records[i].test_metric == b.log.records[i].test_metric);
    if (i) CHECK(a.log.records[i].iteration > a.log.records[i - 1].iteration);
  }
  cfg.workers = 3;
  const auto c = train<double>(spec, bench, cfg);
  CHECK(c.log.records.back().test_metric == doctest::Approx(a.log.records.back().test_metric).epsilon(1e-9));

  std::ostringstream csv;
  a.log.write_csv(csv);
  CHECK(csv.str().rfind("iteration,train_loss,test_metric,seconds\n0,", 0) == 0);

  cfg.iterations = 0;
  CHECK_THROWS_AS(train<double>(spec, bench, cfg), ContractError);
  cfg.iterations = 5;
  spec.input_dim = 2;
  CHECK_THROWS_AS(train<double>(spec, bench, cfg), ContractError);
}

TEST_CASE("short copy-first task is learned by every cell kind") {
  // One BRC layer learns this too slowly for 2000 steps; three are enough.
  const Benchmark bench(SampleSpec{BenchmarkKind::copy_first, 5});
  for (CellKind kind : kAllCellKinds) {
    CAPTURE(to_string(kind));
    NetworkSpec spec;
    spec.cell = kind;
    spec.layer_sizes = {32, 32, 32};
    TrainConfig cfg;
    cfg.iterations = 2000;
    cfg.eval_every = 2000;
    cfg.test_size = 1000;
    cfg.seed = 1;
    const auto r = train<double>(spec, bench, cfg);
    CHECK(r.log.records.back().test_metric < 0.05);
  }
}

}
