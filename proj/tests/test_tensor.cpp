#include <doctest.h>

#include <cmath>
#include <random>

#include "finmine/autodiff.hpp"
#include "finmine/ops.hpp"
#include "finmine/optim.hpp"
#include "helpers.hpp"

using namespace finmine;
using testutil::error_of;
using P = Parameter<double>;
using V = Var<double>;
using TapeD = Tape<double>;

namespace {

constexpr double kStep = 1e-4;
constexpr double kTol = 1e-4;

// Values bounded away from zero so ReLU kinks stay out of the difference stencil.
Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = 0.1, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

P param(const std::string& name, Tensor<double> value) { return P{name, std::move(value), true}; }

// Reduces an arbitrary output to a scalar through fixed random weights, so
// every output element carries a distinct gradient.
V project(TapeD& tape, const V& out, const Tensor<double>& weights) {
  return sum(tape, mul(tape, out, tape.constant(weights)));
}

double check(const ScalarGraph<double>& graph, std::vector<P*> params) {
  const auto r = grad_check<double>(graph, params, kStep);
  INFO("worst: " << r.worst_parameter << "[" << r.worst_index << "] analytic " << r.analytic << " numeric "
                 << r.numeric);
  CHECK(r.max_relative_error < kTol);
  return r.max_relative_error;
}

Tensor<double> t2(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor<double>(Shape{r, c}, std::move(v)); }

}  // namespace

TEST_CASE("grad_check on θ² recovers 2θ") {
  P theta = param("theta", Tensor<double>(Shape{1}, std::vector<double>{3.0}));
  std::vector<P*> ps{&theta};
  const auto r = grad_check<double>(
      [&](TapeD& t) {
        auto v = t.parameter(theta);
        return sum(t, mul(t, v, v));
      },
      ps, kStep);
  CHECK(r.analytic == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(std::abs(r.numeric - 6.0) < 1e-8);
}

TEST_CASE("non-finite values trip NonFiniteValue") {
  TapeD tape;
  Tensor<double> bad(Shape{2}, std::vector<double>{1.0, std::nan("")});
  CHECK(error_of([&] { tape.variable(bad); }) == ErrorCode::NonFiniteValue);
  P theta = param("theta", Tensor<double>(Shape{1}, std::vector<double>{1.0}));
  std::vector<P*> ps{&theta};
  CHECK(error_of([&] {
          grad_check<double>(
              [&](TapeD& t) {
                auto v = t.parameter(theta);
                const double s = theta.value[0] > 1.0 ? std::numeric_limits<double>::infinity() : 1.0;
                return sum(t, scale(t, v, s));
              },
              ps, kStep);
        }) == ErrorCode::NonFiniteValue);
}

TEST_CASE("fan-out accumulates: d(f+f) = 2 df exactly") {
  std::mt19937_64 rng(1);
  P x = param("x", random_tensor({3, 4}, rng));
  const auto w = random_tensor({3, 4}, rng);
  TapeD a, b;
  auto fa = project(a, tanh(a, a.parameter(x)), w);
  a.backward(fa);
  auto xb = b.parameter(x);
  auto y = tanh(b, xb);
  auto fb = add(b, project(b, y, w), project(b, y, w));
  b.backward(fb);
  const auto ga = a.gradient(x), gb = b.gradient(x);
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(gb[i] == 2.0 * ga[i]);
}

TEST_CASE("conv2d examples") {
  TapeD tape;
  auto input = tape.constant(Tensor<double>(Shape{2, 2, 1}, std::vector<double>{1, 2, 3, 4}));
  auto identity = tape.constant(Tensor<double>(Shape{1, 1, 1, 1}, std::vector<double>{1}));
  auto zero_bias = tape.constant(Tensor<double>(Shape{1}));
  auto same = conv2d(tape, input, identity, zero_bias);
  CHECK(same.value().storage() == input.value().storage());

  auto ones = tape.constant(Tensor<double>(Shape{3, 3, 1, 1}, 1.0));
  auto boxed = conv2d(tape, input, ones, zero_bias);
  CHECK(boxed.value().storage() == std::vector<double>{10, 10, 10, 10});

  auto wrong = tape.constant(Tensor<double>(Shape{3, 3, 2, 1}, 1.0));
  CHECK(error_of([&] { conv2d(tape, input, wrong, zero_bias); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("maxpool_freq examples") {
  TapeD tape;
  // T=2, F=3, C=1
  auto x = tape.variable(Tensor<double>(Shape{2, 3, 1}, std::vector<double>{1, 5, 2, 3, 1, 0}));
  auto y = maxpool_freq(tape, x);
  CHECK(y.value().storage() == std::vector<double>{5, 3});

  TapeD t2;
  auto flat = t2.variable(Tensor<double>(Shape{1, 4, 1}, 2.0));
  auto pooled = maxpool_freq(t2, flat);
  t2.backward(sum(t2, pooled));
  CHECK(flat.node().grad() == std::vector<double>{1, 0, 0, 0});

  TapeD t3;
  auto single = t3.variable(Tensor<double>(Shape{3, 1, 2}, std::vector<double>{1, 2, 3, 4, 5, 6}));
  CHECK(maxpool_freq(t3, single).value().storage() == std::vector<double>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("maxpool gradient partitions the incoming gradient") {
  std::mt19937_64 rng(2);
  TapeD tape;
  auto x = tape.variable(random_tensor({5, 6, 3}, rng));
  const auto w = random_tensor({5, 3}, rng);
  tape.backward(project(tape, maxpool_freq(tape, x), w));
  double in = 0.0, out = 0.0;
  for (double g : x.node().grad()) in += g;
  for (double g : w.data()) out += g;
  CHECK(in == doctest::Approx(out).epsilon(1e-12));
}

TEST_CASE("lstm with zero parameters outputs zeros") {
  std::mt19937_64 rng(3);
  TapeD tape;
  auto x = tape.constant(random_tensor({6, 3}, rng));
  auto wi = tape.constant(Tensor<double>(Shape{3, 8}));
  auto wr = tape.constant(Tensor<double>(Shape{2, 8}));
  auto b = tape.constant(Tensor<double>(Shape{8}));
  auto seq = lstm(tape, x, wi, wr, b, Sequence::ManyToMany);
  CHECK(seq.shape() == Shape{6, 2});
  for (double v : seq.value().data()) CHECK(v == 0.0);
  auto last = lstm(tape, x, wi, wr, b, Sequence::ManyToOne);
  CHECK(last.size() == 2);
  for (double v : last.value().data()) CHECK(v == 0.0);
}

TEST_CASE("lstm single step: many-to-many equals many-to-one") {
  std::mt19937_64 rng(4);
  TapeD tape;
  auto x = tape.constant(random_tensor({1, 3}, rng));
  auto wi = tape.constant(random_tensor({3, 8}, rng));
  auto wr = tape.constant(random_tensor({2, 8}, rng));
  auto b = tape.constant(random_tensor({8}, rng));
  auto a = lstm(tape, x, wi, wr, b, Sequence::ManyToMany);
  auto c = lstm(tape, x, wi, wr, b, Sequence::ManyToOne);
  CHECK(a.value().storage() == c.value().storage());
}

TEST_CASE("lstm cell matches a hand-written step") {
  // One step, D=1, H=1: gates from x·W + b, zero previous state.
  TapeD tape;
  auto x = tape.constant(Tensor<double>(Shape{1, 1}, std::vector<double>{0.5}));
  auto wi = tape.constant(Tensor<double>(Shape{1, 4}, std::vector<double>{0.1, 0.2, 0.3, 0.4}));
  auto wr = tape.constant(Tensor<double>(Shape{1, 4}, std::vector<double>{0.0, 0.0, 0.0, 0.0}));
  auto b = tape.constant(Tensor<double>(Shape{4}, std::vector<double>{0.0, 1.0, 0.0, 0.0}));
  auto h = lstm(tape, x, wi, wr, b, Sequence::ManyToOne);
  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  const double i = sig(0.05), g = std::tanh(0.15), o = sig(0.2);
  const double c = i * g;  // forget gate multiplies c0 = 0
  CHECK(h.value()[0] == doctest::Approx(o * std::tanh(c)).epsilon(1e-14));
}

TEST_CASE("bidirectional pass on a palindrome mirrors itself") {
  std::mt19937_64 rng(5);
  TapeD tape;
  auto half = random_tensor({3, 2}, rng);
  Tensor<double> pal(Shape{6, 2});
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t d = 0; d < 2; ++d) pal.at(t, d) = pal.at(5 - t, d) = half.at(t, d);
  auto x = tape.constant(pal);
  auto wi = tape.constant(random_tensor({2, 12}, rng));
  auto wr = tape.constant(random_tensor({3, 12}, rng));
  auto b = tape.constant(random_tensor({12}, rng));
  auto fwd = lstm(tape, x, wi, wr, b, Sequence::ManyToMany);
  auto bwd = reverse_rows(tape, lstm(tape, reverse_rows(tape, x), wi, wr, b, Sequence::ManyToMany));
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t h = 0; h < 3; ++h) CHECK(fwd.value().at(t, h) == doctest::Approx(bwd.value().at(5 - t, h)));
}

TEST_CASE("repeat_vector examples") {
  TapeD tape;
  auto v = tape.variable(Tensor<double>(Shape{2}, std::vector<double>{1, 2}));
  auto r = repeat_vector(tape, v, 3);
  CHECK(r.shape() == Shape{3, 2});
  CHECK(r.value().storage() == std::vector<double>{1, 2, 1, 2, 1, 2});
  tape.backward(sum(tape, r));
  CHECK(v.node().grad() == std::vector<double>{3, 3});
  TapeD t1;
  CHECK(repeat_vector(t1, t1.constant(Tensor<double>(Shape{2}, std::vector<double>{1, 2})), 1).value().storage() ==
        std::vector<double>{1, 2});
}

TEST_CASE("dense examples") {
  TapeD tape;
  auto x = tape.constant(t2(1, 2, {-1, 2}));
  auto eye = tape.constant(t2(2, 2, {1, 0, 0, 1}));
  auto zero = tape.constant(Tensor<double>(Shape{2}));
  CHECK(dense(tape, x, eye, zero, Activation::Linear).value().storage() == std::vector<double>{-1, 2});
  CHECK(dense(tape, x, eye, zero, Activation::Relu).value().storage() == std::vector<double>{0, 2});
  auto z = tape.constant(t2(1, 2, {0, 0}));
  CHECK(dense(tape, z, eye, zero, Activation::Softmax).value().storage() == std::vector<double>{0.5, 0.5});
  auto bad = tape.constant(t2(3, 2, {1, 0, 0, 1, 0, 0}));
  CHECK(error_of([&] { dense(tape, x, bad, zero, Activation::Linear); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("softmax rows sum to one, sigmoid stays inside (0, 1)") {
  std::mt19937_64 rng(6);
  TapeD tape;
  auto x = tape.constant(random_tensor({7, 5}, rng, 0.1, 30.0));
  auto s = softmax_rows(tape, x);
  for (std::size_t r = 0; r < 7; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < 5; ++c) acc += s.value().at(r, c);
    CHECK(std::abs(acc - 1.0) < 1e-6);
  }
  for (double v : sigmoid(tape, x).value().data()) CHECK((v > 0.0 && v < 1.0));
}

TEST_CASE("batchnorm examples") {
  Tensor<double> mean(Shape{1}), var(Shape{1}, 1.0);
  BatchNormStats<double> stats{&mean, &var};
  TapeD tape;
  auto x = tape.constant(t2(2, 1, {-1, 1}));
  auto one = tape.constant(Tensor<double>(Shape{1}, 1.0));
  auto zero = tape.constant(Tensor<double>(Shape{1}));
  auto y = batchnorm(tape, x, one, zero, stats, Mode::Train);
  CHECK(y.value()[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y.value()[1] == doctest::Approx(1.0).epsilon(1e-5));
  // running moments moved towards the batch statistics (0, 1) with momentum 0.99
  CHECK(mean[0] == doctest::Approx(0.0));
  CHECK(var[0] == doctest::Approx(1.0));

  auto beta = tape.constant(Tensor<double>(Shape{1}, 0.3));
  auto g0 = batchnorm(tape, x, zero, beta, stats, Mode::Train);
  for (double v : g0.value().data()) CHECK(v == 0.3);

  auto single = tape.constant(t2(1, 1, {2.0}));
  CHECK(error_of([&] { batchnorm(tape, single, one, zero, stats, Mode::Train); }) == ErrorCode::DegenerateBatch);
  // Infer mode uses the running moments and accepts a single row.
  auto inf = batchnorm(tape, single, one, zero, stats, Mode::Infer);
  CHECK(inf.value()[0] == doctest::Approx((2.0 - mean[0]) / std::sqrt(var[0] + 1e-5)));
}

TEST_CASE("batchnorm running statistics follow momentum 0.99") {
  Tensor<double> mean(Shape{1}), var(Shape{1}, 1.0);
  TapeD tape;
  auto x = tape.constant(t2(2, 1, {1, 3}));  // mean 2, biased var 1
  auto one = tape.constant(Tensor<double>(Shape{1}, 1.0));
  auto zero = tape.constant(Tensor<double>(Shape{1}));
  batchnorm(tape, x, one, zero, BatchNormStats<double>{&mean, &var}, Mode::Train);
  CHECK(mean[0] == doctest::Approx(0.99 * 0.0 + 0.01 * 2.0));
  CHECK(var[0] == doctest::Approx(0.99 * 1.0 + 0.01 * 1.0));
}

TEST_CASE("dropout examples") {
  TapeD tape;
  auto x = tape.constant(Tensor<double>(Shape{100000}, 1.0));
  CHECK(dropout(tape, x, 0.5, Mode::Infer, 1).value().storage() == x.value().storage());
  CHECK(dropout(tape, x, 0.0, Mode::Train, 1).value().storage() == x.value().storage());
  const auto y = dropout(tape, x, 0.5, Mode::Train, 42).value();
  double mean = 0.0;
  for (double v : y.data()) {
    CHECK((v == 0.0 || v == 2.0));
    mean += v;
  }
  mean /= 100000.0;
  CHECK(mean >= 0.98);
  CHECK(mean <= 1.02);
  CHECK(dropout(tape, x, 0.5, Mode::Train, 42).value() == y);
}

TEST_CASE("loss examples") {
  TapeD tape;
  auto a = tape.constant(t2(1, 2, {0, 2}));
  auto z = tape.constant(t2(1, 2, {0, 0}));
  CHECK(loss(tape, a, a, LossKind::Mse).value()[0] == 0.0);
  CHECK(loss(tape, a, z, LossKind::Mse).value()[0] == 2.0);
  auto half = tape.constant(t2(1, 1, {0.5}));
  auto one = tape.constant(t2(1, 1, {1.0}));
  CHECK(loss(tape, half, one, LossKind::BinaryCrossEntropy).value()[0] == doctest::Approx(std::log(2.0)));
  auto p = tape.constant(t2(1, 2, {0.25, 0.75}));
  auto oh = tape.constant(t2(1, 2, {0, 1}));
  CHECK(loss(tape, p, oh, LossKind::CategoricalCrossEntropy).value()[0] == doctest::Approx(-std::log(0.75)));
  // clamping keeps log(0) finite
  auto zero_pred = tape.constant(t2(1, 1, {0.0}));
  CHECK(loss(tape, zero_pred, one, LossKind::BinaryCrossEntropy).value()[0] ==
        doctest::Approx(-std::log(1e-7)).epsilon(1e-6));
  CHECK(error_of([&] { loss(tape, a, one, LossKind::Mse); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("adam examples") {
  P theta = param("theta", Tensor<double>(Shape{1}));
  std::vector<P*> ps{&theta};
  auto state = make_adam_state<double>(ps);
  adam_step<double>(ps, {{1.0}}, state);
  CHECK(theta.value[0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
  const double after_one = theta.value[0];
  adam_step<double>(ps, {{1.0}}, state);
  CHECK(std::abs(theta.value[0] - after_one) == doctest::Approx(1e-3).epsilon(1e-6));
  CHECK(state.step == 2);

  P still = param("still", Tensor<double>(Shape{3}, 0.7));
  std::vector<P*> qs{&still};
  auto fresh = make_adam_state<double>(qs);
  adam_step<double>(qs, {{0.0, 0.0, 0.0}}, fresh);
  for (double v : still.value.data()) CHECK(v == 0.7);

  P frozen{"frozen", Tensor<double>(Shape{1}, 5.0), false};
  std::vector<P*> fs{&frozen};
  auto fst = make_adam_state<double>(fs);
  adam_step<double>(fs, {{3.0}}, fst);
  CHECK(frozen.value[0] == 5.0);
}

TEST_CASE("adam follows the bias-corrected update equations") {
  // Independent recomputation in long double over a random gradient stream.
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  P theta = param("theta", Tensor<double>(Shape{4}, 0.25));
  std::vector<P*> ps{&theta};
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  auto state = make_adam_state<double>(ps, cfg);
  std::vector<long double> m(4, 0), v(4, 0), th(4, 0.25L);
  for (int t = 1; t <= 25; ++t) {
    std::vector<double> grad(4);
    for (auto& x : grad) x = g(rng);
    adam_step<double>(ps, {grad}, state);
    for (int i = 0; i < 4; ++i) {
      m[i] = 0.9L * m[i] + 0.1L * grad[i];
      v[i] = 0.999L * v[i] + 0.001L * grad[i] * grad[i];
      const long double mh = m[i] / (1 - std::pow(0.9L, t)), vh = v[i] / (1 - std::pow(0.999L, t));
      th[i] -= 0.01L * mh / (std::sqrt(vh) + 1e-8L);
    }
  }
  for (int i = 0; i < 4; ++i) CHECK(theta.value[i] == doctest::Approx(static_cast<double>(th[i])).epsilon(1e-12));
}

TEST_CASE("xavier uniform stays within its limit") {
  std::mt19937_64 rng(8);
  Tensor<double> w(Shape{30, 20});
  xavier_uniform(w, 30, 20, rng);
  const double limit = std::sqrt(6.0 / 50.0);
  double mx = 0.0;
  for (double v : w.data()) mx = std::max(mx, std::abs(v));
  CHECK(mx <= limit);
  CHECK(mx > 0.8 * limit);
}

// Per-layer gradient checks over 20 seeds each -------------------------------------

TEST_CASE("gradient check: dense with every activation") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    P x = param("x", random_tensor({4, 3}, rng));
    P w = param("w", random_tensor({3, 5}, rng));
    P b = param("b", random_tensor({5}, rng));
    const auto proj = random_tensor({4, 5}, rng);
    for (auto act : {Activation::Linear, Activation::Relu, Activation::Sigmoid, Activation::Tanh,
                     Activation::Softmax}) {
      check(
          [&](TapeD& t) {
            return project(t, dense(t, t.parameter(x), t.parameter(w), t.parameter(b), act), proj);
          },
          {&x, &w, &b});
    }
  }
}

TEST_CASE("gradient check: conv2d with even kernels and several channels") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    P x = param("x", random_tensor({5, 6, 2}, rng));
    P k = param("k", random_tensor({4, 3, 2, 3}, rng));
    P b = param("b", random_tensor({3}, rng));
    const auto proj = random_tensor({5, 6, 3}, rng);
    check([&](TapeD& t) { return project(t, conv2d(t, t.parameter(x), t.parameter(k), t.parameter(b)), proj); },
          {&x, &k, &b});
  }
}

TEST_CASE("gradient check: maxpool over frequency") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(200 + seed);
    P x = param("x", random_tensor({4, 5, 3}, rng));
    const auto proj = random_tensor({4, 3}, rng);
    check([&](TapeD& t) { return project(t, maxpool_freq(t, t.parameter(x)), proj); }, {&x});
  }
}

TEST_CASE("gradient check: lstm both sequence modes") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(300 + seed);
    P x = param("x", random_tensor({6, 3}, rng));
    P wi = param("wi", random_tensor({3, 16}, rng, 0.05, 0.6));
    P wr = param("wr", random_tensor({4, 16}, rng, 0.05, 0.6));
    P b = param("b", random_tensor({16}, rng));
    const auto proj_seq = random_tensor({6, 4}, rng);
    const auto proj_last = random_tensor({4}, rng);
    check(
        [&](TapeD& t) {
          return project(
              t, lstm(t, t.parameter(x), t.parameter(wi), t.parameter(wr), t.parameter(b), Sequence::ManyToMany),
              proj_seq);
        },
        {&x, &wi, &wr, &b});
    check(
        [&](TapeD& t) {
          return project(
              t, lstm(t, t.parameter(x), t.parameter(wi), t.parameter(wr), t.parameter(b), Sequence::ManyToOne),
              proj_last);
        },
        {&x, &wi, &wr, &b});
  }
}

TEST_CASE("gradient check: structural ops") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(400 + seed);
    P a = param("a", random_tensor({3, 2}, rng));
    P c = param("c", random_tensor({3, 4}, rng));
    P v = param("v", random_tensor({5}, rng));
    const auto p1 = random_tensor({3, 6}, rng);
    const auto p2 = random_tensor({4, 5}, rng);
    const auto p3 = random_tensor({3, 5}, rng);
    check([&](TapeD& t) { return project(t, concat_cols(t, reverse_rows(t, t.parameter(a)), t.parameter(c)), p1); },
          {&a, &c});
    check([&](TapeD& t) { return project(t, repeat_vector(t, t.parameter(v), 4), p2); }, {&v});
    check(
        [&](TapeD& t) {
          auto row = t.parameter(v);
          return project(t, stack_rows(t, std::vector<V>{row, scale(t, row, 2.0), tanh(t, row)}), p3);
        },
        {&v});
  }
}

TEST_CASE("gradient check: batchnorm in train mode") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(500 + seed);
    P x = param("x", random_tensor({5, 3}, rng));
    P g = param("gamma", random_tensor({3}, rng));
    P b = param("beta", random_tensor({3}, rng));
    Tensor<double> mean(Shape{3}), var(Shape{3}, 1.0);
    const auto proj = random_tensor({5, 3}, rng);
    check(
        [&](TapeD& t) {
          return project(
              t, batchnorm(t, t.parameter(x), t.parameter(g), t.parameter(b), {&mean, &var}, Mode::Train), proj);
        },
        {&x, &g, &b});
  }
}

TEST_CASE("gradient check: dropout with a fixed mask") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(600 + seed);
    P x = param("x", random_tensor({4, 6}, rng));
    const auto proj = random_tensor({4, 6}, rng);
    check([&](TapeD& t) { return project(t, dropout(t, tanh(t, t.parameter(x)), 0.5, Mode::Train, seed), proj); },
          {&x});
  }
}

TEST_CASE("gradient check: losses") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(700 + seed);
    P z = param("z", random_tensor({4, 3}, rng));
    const auto target = random_tensor({4, 3}, rng);
    Tensor<double> binary(Shape{4, 3}), onehot(Shape{4, 3});
    for (std::size_t i = 0; i < 12; ++i) binary[i] = (rng() & 1) ? 1.0 : 0.0;
    for (std::size_t r = 0; r < 4; ++r) onehot.at(r, rng() % 3) = 1.0;
    check([&](TapeD& t) { return loss(t, t.parameter(z), t.constant(target), LossKind::Mse); }, {&z});
    check([&](TapeD& t) { return loss(t, sigmoid(t, t.parameter(z)), t.constant(binary), LossKind::BinaryCrossEntropy); },
          {&z});
    check(
        [&](TapeD& t) {
          return loss(t, softmax_rows(t, t.parameter(z)), t.constant(onehot), LossKind::CategoricalCrossEntropy);
        },
        {&z});
  }
}
