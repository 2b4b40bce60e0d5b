#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "grain/autodiff.hpp"
#include "grain/gradcheck.hpp"
#include "grain/gradient_suite.hpp"
#include "grain/optim.hpp"
#include "grain/rng.hpp"

using namespace grain;

TEST(Tensor, ShapeMismatchNamesBothShapes) {
  Tape t;
  Var a = t.constant(Tensor(2, 3));
  Var b = t.constant(Tensor(4, 5));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4, 5]"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(mul(a, b), ShapeError);
}

TEST(Tensor, DataLengthMustMatchShape) { EXPECT_THROW(Tensor(2, 2, std::vector<double>{1, 2, 3}), ShapeError); }

TEST(Ops, ReluSignCases) {
  Tape t;
  Var y = relu(t.constant(Tensor::row_vector({-1, 0, 2})));
  EXPECT_EQ(y.value(), Tensor::row_vector({0, 0, 2}));
}

TEST(Ops, LogSoftmaxOfZeros) {
  Tape t;
  Var y = log_softmax(t.constant(Tensor(1, 3)));
  for (double v : y.value().data()) EXPECT_NEAR(v, -std::log(3.0), 1e-12);
  EXPECT_NEAR(y.value()[0], -1.0986, 1e-4);
}

TEST(Ops, LogSoftmaxRowsNormalize) {
  SeededRng rng(3);
  Tape t;
  Var y = log_softmax(t.constant(detail::random_tensor(20, 7, rng, 30.0)));
  for (std::size_t i = 0; i < 20; ++i) {
    double s = 0.0;
    for (double v : y.value().row(i)) s += std::exp(v);
    EXPECT_NEAR(s, 1.0, 1e-10);
  }
}

TEST(Ops, DropoutEvalIsIdentity) {
  SeededRng rng(1);
  Tape t;
  const Tensor x = Tensor::from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(dropout(t.constant(x), 0.5, rng, false).value(), x);
}

TEST(Ops, DropoutRejectsBadRate) {
  SeededRng rng(1);
  Tape t;
  Var x = t.constant(Tensor(1, 1, 1.0));
  EXPECT_THROW(dropout(x, 1.0, rng, true), std::invalid_argument);
  EXPECT_THROW(dropout(x, -0.1, rng, true), std::invalid_argument);
}

TEST(Ops, DropoutIsUnbiased) {
  // Mean of 1e5 training-mode outputs of a unit input stays within 3 standard errors of 1.
  SeededRng rng(11);
  Tape t;
  const std::size_t trials = 100000;
  const double p = 0.3;
  Var y = dropout(t.constant(Tensor(trials, 1, 1.0)), p, rng, true);
  double mean = 0.0;
  for (double v : y.value().data()) mean += v;
  mean /= trials;
  const double sd = std::sqrt(p / (1.0 - p));  // std of a single scaled Bernoulli draw
  EXPECT_LT(std::abs(mean - 1.0), 3.0 * sd / std::sqrt(static_cast<double>(trials)));
}

TEST(Ops, ConcatJoinsColumns) {
  Tape t;
  Var y = concat(t.constant(Tensor::from_rows({{1}, {2}})), t.constant(Tensor::from_rows({{3, 4}, {5, 6}})));
  EXPECT_EQ(y.value(), Tensor::from_rows({{1, 3, 4}, {2, 5, 6}}));
}

TEST(Ops, MseHandValue) {
  Tape t;
  Var y = mse(t.constant(Tensor::row_vector({1, 2})), t.constant(Tensor::row_vector({0, 4})));
  EXPECT_DOUBLE_EQ(y.value().item(), 2.5);
}

TEST(Tape, BackwardVisitsEachNodeOnce) {
  Tape t;
  Var x = t.variable(Tensor::row_vector({1, 2, 3}));
  Var a = mul(x, x);
  Var b = add(a, x);  // x reached along two paths
  Var s = sum(add(b, a));
  t.backward(s);
  EXPECT_EQ(t.last_backward_visits(), t.size());
  // d/dx (2x^2 + x) = 4x + 1
  EXPECT_EQ(t.grad(x), Tensor::row_vector({5, 9, 13}));
}

TEST(Tape, BackwardRejectsNonScalar) {
  Tape t;
  Var x = t.variable(Tensor(2, 2));
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Tape, BackwardIsLinear) {
  SeededRng rng(5);
  const Tensor x0 = detail::random_tensor(3, 4, rng);
  const Tensor w = detail::random_tensor(4, 2, rng);
  auto f = [&](Tape& t, Var x) { return sum(tanh(matmul(x, t.constant(w)))); };
  auto g = [&](Tape&, Var x) { return mean(mul(x, x)); };
  auto grad_of = [&](auto&& fn) {
    Tape t;
    Var x = t.variable(x0);
    t.backward(fn(t, x));
    return t.grad(x);
  };
  const Tensor gf = grad_of(f), gg = grad_of(g);
  const Tensor gs = grad_of([&](Tape& t, Var x) { return add(f(t, x), g(t, x)); });
  for (std::size_t i = 0; i < gs.size(); ++i) EXPECT_NEAR(gs[i], gf[i] + gg[i], 1e-12);
}

TEST(GradCheck, ReluLinearRegion) {
  ScalarFn f = [](Tape&, Var x) { return sum(relu(x)); };
  const Tensor x = Tensor::from_rows({{0.5, 1.0}, {2.0, 3.0}});
  Tape t;
  Var v = t.variable(x);
  t.backward(f(t, v));
  EXPECT_EQ(t.grad(v), Tensor(2, 2, 1.0));
  EXPECT_LT(grad_check(f, x), 1e-6);
}

TEST(GradCheck, TwoLayerTanhNetwork) {
  // 3 -> 4 -> 1 network with 20 parameters packed into one row: W1 (12), b1 (4), W2 (4).
  SeededRng rng(9);
  const Tensor in = detail::random_tensor(5, 3, rng);
  ScalarFn f = [in](Tape& t, Var p) {
    auto block = [&](std::size_t off, std::size_t rows, std::size_t cols) {
      Var out{};
      for (std::size_t r = 0; r < rows; ++r) {
        Tensor sel(20, cols), unit(rows, 1);
        for (std::size_t c = 0; c < cols; ++c) sel(off + r * cols + c, c) = 1.0;
        unit(r, 0) = 1.0;
        Var row = matmul(t.constant(unit), matmul(p, t.constant(sel)));
        out = r == 0 ? row : add(out, row);
      }
      return out;
    };
    Var hidden = tanh(affine(t.constant(in), block(0, 3, 4), block(12, 1, 4)));
    return sum(tanh(matmul(hidden, block(16, 4, 1))));
  };
  EXPECT_LT(grad_check(f, detail::random_tensor(1, 20, rng), 1e-5), 1e-4);
}

TEST(GradCheck, NllAtZerosHandGradient) {
  const std::vector<std::size_t> rows{0};
  const std::vector<int> labels{1};
  Tape t;
  Var z = t.variable(Tensor(1, 3));
  t.backward(nll_loss(log_softmax(z), rows, labels));
  const Tensor g = t.grad(z);
  EXPECT_NEAR(g[0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(g[1], 1.0 / 3.0 - 1.0, 1e-12);
  EXPECT_NEAR(g[2], 1.0 / 3.0, 1e-12);
}

TEST(GradCheck, RejectsNonScalarAndBadEps) {
  ScalarFn id = [](Tape&, Var x) { return x; };
  EXPECT_THROW(grad_check(id, Tensor(2, 2)), ShapeError);
  ScalarFn s = [](Tape&, Var x) { return sum(x); };
  EXPECT_THROW(grad_check(s, Tensor(1, 1), 1e-9), std::invalid_argument);
  EXPECT_THROW(grad_check(s, Tensor(1, 1), 1e-2), std::invalid_argument);
}

TEST(GradCheck, SuiteOverAllOps) {
  for (const auto& c : run_gradient_suite(50, 21)) {
    EXPECT_LT(c.max_error, c.tolerance) << c.op;
    EXPECT_EQ(c.instances, 50u);
  }
}

TEST(Adam, ZeroGradientLeavesEverythingAtRest) {
  std::vector<Parameter> ps{{"w", Tensor::row_vector({1.0, -2.0})}};
  auto state = make_adam_state(ps);
  const std::vector<Tensor> g{Tensor(1, 2)};
  adam_step(ps, g, state, AdamConfig{.lr = 0.01});
  EXPECT_EQ(ps[0].value, Tensor::row_vector({1.0, -2.0}));
  EXPECT_EQ(state.m[0], Tensor(1, 2));
  EXPECT_EQ(state.v[0], Tensor(1, 2));
  EXPECT_EQ(state.t, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  std::vector<Parameter> ps{{"w", Tensor::scalar(3.0)}};
  auto state = make_adam_state(ps);
  adam_step(ps, std::vector<Tensor>{Tensor::scalar(0.5)}, state, AdamConfig{.lr = 0.01});
  const double expected = 3.0 - 0.01 * 0.5 / (0.5 + 1e-8);
  EXPECT_NEAR(ps[0].value.item(), expected, 1e-15);
  EXPECT_NEAR(ps[0].value.item() - 3.0, -0.01, 1e-9);
  EXPECT_NEAR(state.m[0].item(), 0.05, 1e-15);
  EXPECT_NEAR(state.v[0].item(), 0.00025, 1e-15);
}

TEST(Adam, SecondStepHandValue) {
  std::vector<Parameter> ps{{"w", Tensor::scalar(0.0)}};
  auto state = make_adam_state(ps);
  const AdamConfig cfg{.lr = 0.1};
  adam_step(ps, std::vector<Tensor>{Tensor::scalar(1.0)}, state, cfg);
  adam_step(ps, std::vector<Tensor>{Tensor::scalar(-1.0)}, state, cfg);
  // m2 = 0.9*0.1 - 0.1 = -0.01 ; v2 = 0.999*0.001 + 0.001 = 0.001999
  const double mhat = -0.01 / (1 - 0.81), vhat = 0.001999 / (1 - 0.999 * 0.999);
  const double w1 = -0.1 / (1.0 + 1e-8);
  const double expected = w1 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  EXPECT_NEAR(ps[0].value.item(), expected, 1e-14);
  EXPECT_EQ(state.t, 2u);
}

TEST(Adam, NanGradientAbortsAndNamesParameter) {
  std::vector<Parameter> ps{{"layer1.weight", Tensor::scalar(1.0)}, {"bias", Tensor::scalar(2.0)}};
  auto state = make_adam_state(ps);
  const std::vector<Tensor> g{Tensor::scalar(0.1), Tensor::scalar(std::nan(""))};
  try {
    adam_step(ps, g, state, AdamConfig{});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("bias"), std::string::npos);
  }
  EXPECT_EQ(ps[0].value.item(), 1.0);
  EXPECT_EQ(state.t, 0u);
}

TEST(Adam, RejectsNonPositiveLearningRate) {
  std::vector<Parameter> ps{{"w", Tensor::scalar(1.0)}};
  auto state = make_adam_state(ps);
  EXPECT_THROW(adam_step(ps, std::vector<Tensor>{Tensor::scalar(1.0)}, state, AdamConfig{.lr = 0.0}),
               std::invalid_argument);
}

TEST(Adam, DeterministicTrajectories) {
  auto run = [] {
    SeededRng rng(42);
    std::vector<Parameter> ps{{"w", detail::random_tensor(3, 3, rng)}};
    auto state = make_adam_state(ps);
    for (int i = 0; i < 20; ++i) {
      Tape t;
      Var w = t.variable(ps[0].value);
      t.backward(sum(tanh(matmul(w, w))));
      adam_step(ps, std::vector<Tensor>{t.grad(w)}, state, AdamConfig{.lr = 0.05});
    }
    return ps[0].value;
  };
  EXPECT_EQ(run(), run());
}

TEST(Rng, SameSeedSameSequence) {
  SeededRng a(123), b(123), c(124);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs = differs || x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, UniformIndexInRangeAndNormalMoments) {
  SeededRng rng(8);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    EXPECT_LT(rng.uniform_index(7), 7u);
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, SerializeRoundTrip) {
  SeededRng a(99);
  a.normal();
  a.next_u64();
  SeededRng b = SeededRng::deserialize(a.serialize());
  EXPECT_EQ(a, b);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.normal(), b.normal());
}
