#include <cmath>

#include "akmnet/gradcheck.hpp"
#include "akmnet/ops.hpp"
#include "akmnet/parameters.hpp"
#include "akmnet/primitive_checks.hpp"
#include "doctest.h"

using namespace akmnet::nn;

namespace {
Tensor<double> vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>({n}, std::move(v));
}
}  // namespace

TEST_CASE("evaluate: elementwise, sigmoid and softmax forward values") {
  auto a = constant(vec({1, 2}));
  auto b = constant(vec({3, 4}));
  CHECK(add(a, b).value().vector() == std::vector<double>{4, 6});
  CHECK(sigmoid(constant(Tensor<double>::scalar(0.0))).value().item() == 0.5);
  auto p = softmax(constant(vec({0, 0, 0, 0})));
  for (auto v : p.value().values()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("evaluate: shape mismatch names the primitive and both shapes") {
  auto a = constant(vec({1, 2}));
  auto b = constant(vec({1, 2, 3}));
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(e.primitive() == "add");
    CHECK(e.lhs() == Shape{2});
    CHECK(e.rhs() == Shape{3});
    CHECK(std::string(e.what()).find("[2] vs [3]") != std::string::npos);
  }
}

TEST_CASE("backpropagate: power rule, sigmoid slope, unreachable leaves") {
  auto x = parameter(Tensor<double>::scalar(3.0));
  auto g = gradients(mul(x, x), {x});
  CHECK(g[0].item() == 6.0);

  auto v = parameter(Tensor<double>({3}, 0.0));
  auto k = constant(Tensor<double>({3}, 1.0));
  auto unused = parameter(Tensor<double>({2}, 5.0));
  auto grads = gradients(sum(add(sigmoid(v), k)), {v, unused, k});
  for (auto d : grads[0].values()) CHECK(d == 0.25);
  CHECK(grads[1] == Tensor<double>({2}, 0.0));
  CHECK(grads[2] == Tensor<double>({3}, 0.0));
}

TEST_CASE("backpropagate: non-scalar loss is rejected") {
  auto v = parameter(Tensor<double>({3}, 1.0));
  CHECK_THROWS_AS(backpropagate(scale(v, 2.0)), std::invalid_argument);
}

TEST_CASE("backpropagate: shared subexpressions are visited once") {
  // y = (x + x) * x -> dy/dx = 4x
  auto x = parameter(Tensor<double>::scalar(1.25));
  auto s = add(x, x);
  auto g = gradients(mul(s, x), {x});
  CHECK(g[0].item() == doctest::Approx(5.0));
}

TEST_CASE("grad_check: quadratic is exact under central differences") {
  auto x = parameter(Tensor<double>::scalar(1.5));
  auto report = grad_check([&] { return CheckProbe{mul(x, x)}; }, {{"x", x}}, 1e-4);
  CHECK(report.params[0].max_rel_error < 1e-6);
}

TEST_CASE("grad_check: two-class linear model cross-entropy") {
  RngStream rng(7);
  auto w = parameter(he_normal<double>({3, 2}, 3, rng));
  auto b = parameter(Tensor<double>({2}, 0.1));
  auto x = constant(Tensor<double>({1, 3}, std::vector<double>{0.3, -1.2, 0.8}));
  auto onehot = constant(Tensor<double>({1, 2}, std::vector<double>{0.0, 1.0}));
  auto build = [&] { return CheckProbe{scale(sum(mul(log_softmax(affine(x, w, b)), onehot)), -1.0)}; };
  auto report = grad_check(build, {{"w", w}, {"b", b}}, 1e-6);
  CHECK(report.passed(1e-5));
  CHECK(report.skipped() == 0);
}

TEST_CASE("grad_check: coordinates near a selection threshold are skipped") {
  auto x = parameter(Tensor<double>::scalar(0.0));
  // The probe reports a selection score 1e-6 from its threshold.
  auto build = [&] { return CheckProbe{mul(x, x), 1e-6, {1}}; };
  auto report = grad_check(build, {{"x", x}}, 1e-4);
  CHECK(report.params[0].skipped == 1);
  CHECK(report.params[0].checked == 0);
  CHECK(report.passed(1e-5));
}

TEST_CASE("grad_check: NaN gradients fail and name the parameter") {
  auto x = parameter(Tensor<double>::scalar(-1.0));
  auto build = [&] {
    Tensor<double> nan = Tensor<double>::scalar(std::nan(""));
    return CheckProbe{mul(x, constant(nan))};
  };
  auto report = grad_check(build, {{"weights", x}}, 1e-4);
  CHECK(report.params[0].name == "weights");
  CHECK(report.params[0].nan);
  CHECK_FALSE(report.passed(1e-5));
}

TEST_CASE("grad_check: epsilon outside its range is rejected") {
  auto x = parameter(Tensor<double>::scalar(1.0));
  CHECK_THROWS(grad_check([&] { return CheckProbe{mul(x, x)}; }, {{"x", x}}, 1e-2));
}

TEST_CASE("every primitive passes its finite-difference check") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngStream rng(seed);
    auto checks = check_primitives(rng);
    CHECK(checks.size() == primitive_names().size());
    for (const auto& c : checks) {
      INFO(c.primitive << " seed " << seed << " err " << c.report.worst());
      CHECK(c.report.passed(1e-5));
    }
  }
}

TEST_CASE("an injected backward fault is caught by the primitive checks") {
  RngStream rng(3);
  inject_backward_fault("tanh");
  auto checks = check_primitives(rng);
  clear_backward_fault();
  for (const auto& c : checks) {
    if (c.primitive == "tanh") {
      CHECK_FALSE(c.report.passed(1e-5));
    } else {
      CHECK(c.report.passed(1e-5));
    }
  }
}

TEST_CASE("softmax rows are distributions") {
  RngStream rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> logits({3, 5});
    for (auto& v : logits.values()) v = 10.0 * rng.normal();
    auto p = softmax(constant(logits)).value();
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0;
      for (std::size_t i = 0; i < 5; ++i) {
        CHECK(p[r * 5 + i] >= 0.0);
        total += p[r * 5 + i];
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("dropout masks") {
  RngStream rng(5);
  auto ones = dropout_mask<float>({10}, 0.0, rng);
  for (auto v : ones.values()) CHECK(v == 1.0f);

  auto half = dropout_mask<float>({1000}, 0.5, rng);
  std::size_t kept = 0;
  for (auto v : half.values()) {
    CHECK((v == 0.0f || v == 2.0f));
    kept += v != 0.0f;
  }
  CHECK(kept > 400);
  CHECK(kept < 600);

  RngStream r1(99), r2(99);
  CHECK(dropout_mask<float>({64}, 0.5, r1) == dropout_mask<float>({64}, 0.5, r2));
  r1.reset();
  RngStream r3(99);
  CHECK(dropout_mask<float>({64}, 0.5, r1) == dropout_mask<float>({64}, 0.5, r3));

  auto eval = dropout_mask<float>({8}, 0.5, rng, /*training=*/false);
  for (auto v : eval.values()) CHECK(v == 1.0f);
  CHECK_THROWS(dropout_mask<float>({2}, 1.0, rng));
}

TEST_CASE("rng streams are reproducible and derive independent children") {
  RngStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  auto c1 = RngStream(42).derive(1);
  auto c2 = RngStream(42).derive(2);
  CHECK(c1.next_u64() != c2.next_u64());
  RngStream u(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    const long k = u.uniform_int(3, 6);
    CHECK(k >= 3);
    CHECK(k <= 6);
  }
}

TEST_CASE("conv2d matches a direct convolution") {
  RngStream rng(1);
  Tensor<double> x({1, 2, 4, 4}), w({1, 2, 3, 3});
  for (auto& v : x.values()) v = rng.normal();
  for (auto& v : w.values()) v = rng.normal();
  auto y = conv2d(constant(x), constant(w), 1, 1).value();
  CHECK(y.shape() == Shape{1, 1, 4, 4});
  for (int oy = 0; oy < 4; ++oy) {
    for (int ox = 0; ox < 4; ++ox) {
      double acc = 0;
      for (int c = 0; c < 2; ++c)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = oy + ky - 1, ix = ox + kx - 1;
            if (iy < 0 || iy >= 4 || ix < 0 || ix >= 4) continue;
            acc += x[static_cast<std::size_t>((c * 4 + iy) * 4 + ix)] *
                   w[static_cast<std::size_t>((c * 3 + ky) * 3 + kx)];
          }
      CHECK(y[static_cast<std::size_t>(oy * 4 + ox)] == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("channel_norm normalizes each frame-channel plane independently") {
  Tensor<double> x({2, 1, 2, 2}, std::vector<double>{1, 2, 3, 4, 10, 10, 10, 10});
  auto y = channel_norm(constant(x), constant(Tensor<double>({1}, 1.0)), constant(Tensor<double>({1}, 0.5)))
               .value();
  double m = 0;
  for (int i = 0; i < 4; ++i) m += y[static_cast<std::size_t>(i)];
  CHECK(m / 4 == doctest::Approx(0.5));
  // A constant plane maps to the shift alone.
  for (int i = 4; i < 8; ++i) CHECK(y[static_cast<std::size_t>(i)] == doctest::Approx(0.5));
}

TEST_CASE("identical seeds give bit-identical forward values and gradients") {
  auto run = [] {
    RngStream rng(123);
    auto w = parameter(he_normal<float>({2, 3, 3, 3}, 27, rng));
    Tensor<float> x({2, 3, 6, 6});
    for (auto& v : x.values()) v = static_cast<float>(rng.normal());
    auto y = sum(relu(conv2d(constant(x), w, 2, 1)));
    auto g = gradients(y, {w});
    return std::make_pair(y.value(), g[0]);
  };
  CHECK(run() == run());
}
