#include "akmnet/primitive_checks.hpp"

#include <cmath>
#include <functional>

#include "akmnet/ops.hpp"

namespace akmnet::nn {

namespace {

using D = double;

Tensor<D> random_tensor(const Shape& shape, RngStream& rng, double scale = 1.0) {
  Tensor<D> t(shape);
  for (auto& v : t.values()) {
    // Keep clear of the kinks of relu/max so the check probes smooth regions.
    do {
      v = scale * rng.normal();
    } while (std::abs(v) < 1e-2);
  }
  return t;
}

std::size_t extent(RngStream& rng, std::size_t lo = 1) {
  return static_cast<std::size_t>(rng.uniform_int(static_cast<long>(lo), 5));
}

// Wraps a primitive into a scalar readout sum(w * f(inputs)).
PrimitiveCheck run(const std::string& name, std::vector<NamedLeaf> leaves,
                   const std::function<Var<D>()>& prim, RngStream& rng, double eps) {
  const Shape out_shape = prim().shape();
  auto readout = constant(random_tensor(out_shape, rng));
  auto build = [&] { return CheckProbe{sum(mul(prim(), readout)), INFINITY, {}}; };
  return {name, grad_check(build, leaves, eps)};
}

}  // namespace

std::vector<std::string> primitive_names() {
  return {"add",     "sub",          "mul",          "scale",         "add_scalar",        "matmul",
          "add_bias", "sigmoid",     "tanh",         "relu",          "softmax",           "log_softmax",
          "sum",     "mean",         "max",          "l2_norm",       "cosine_similarity", "concat",
          "gather",  "reshape",      "transpose_last", "conv2d",      "channel_norm",      "spatial_mean",
          "scale_leading", "row_dot",     "weighted_row_sum"};
}

std::vector<PrimitiveCheck> check_primitives(RngStream& rng, double eps) {
  std::vector<PrimitiveCheck> out;
  const Shape s{extent(rng), extent(rng)};
  auto a = parameter(random_tensor(s, rng));
  auto b = parameter(random_tensor(s, rng));

  out.push_back(run("add", {{"a", a}, {"b", b}}, [&] { return add(a, b); }, rng, eps));
  out.push_back(run("sub", {{"a", a}, {"b", b}}, [&] { return sub(a, b); }, rng, eps));
  out.push_back(run("mul", {{"a", a}, {"b", b}}, [&] { return mul(a, b); }, rng, eps));
  out.push_back(run("scale", {{"a", a}}, [&] { return scale(a, 1.7); }, rng, eps));
  out.push_back(run("add_scalar", {{"a", a}}, [&] { return add_scalar(a, -0.3); }, rng, eps));

  {
    const std::size_t m = extent(rng), k = extent(rng), n = extent(rng);
    auto x = parameter(random_tensor({m, k}, rng));
    auto w = parameter(random_tensor({k, n}, rng));
    auto bias = parameter(random_tensor({n}, rng));
    out.push_back(run("matmul", {{"x", x}, {"w", w}}, [&] { return matmul(x, w); }, rng, eps));
    auto xb = parameter(random_tensor({m, n}, rng));
    out.push_back(run("add_bias", {{"x", xb}, {"bias", bias}}, [&] { return add_bias(xb, bias); }, rng, eps));
  }

  out.push_back(run("sigmoid", {{"a", a}}, [&] { return sigmoid(a); }, rng, eps));
  out.push_back(run("tanh", {{"a", a}}, [&] { return nn::tanh(a); }, rng, eps));
  out.push_back(run("relu", {{"a", a}}, [&] { return relu(a); }, rng, eps));
  out.push_back(run("softmax", {{"a", a}}, [&] { return softmax(a); }, rng, eps));
  out.push_back(run("log_softmax", {{"a", a}}, [&] { return log_softmax(a); }, rng, eps));
  out.push_back(run("sum", {{"a", a}}, [&] { return sum(a); }, rng, eps));
  out.push_back(run("mean", {{"a", a}}, [&] { return mean(a); }, rng, eps));
  out.push_back(run("max", {{"a", a}}, [&] { return nn::max(a); }, rng, eps));
  out.push_back(run("l2_norm", {{"a", a}}, [&] { return l2_norm(a); }, rng, eps));

  {
    const std::size_t r = extent(rng), c = extent(rng, 2);
    auto rows = parameter(random_tensor({r, c}, rng));
    auto v = parameter(random_tensor({c}, rng));
    out.push_back(run("cosine_similarity", {{"rows", rows}, {"v", v}},
                      [&] { return cosine_similarity(rows, v); }, rng, eps));
    out.push_back(run("row_dot", {{"rows", rows}, {"v", v}}, [&] { return row_dot(rows, v); }, rng, eps));
    auto w = parameter(random_tensor({r}, rng));
    out.push_back(run("weighted_row_sum", {{"rows", rows}, {"w", w}}, [&] { return weighted_row_sum(rows, w); }, rng,
                      eps));
  }
  {
    const std::size_t r = extent(rng);
    auto p = parameter(random_tensor({r, extent(rng)}, rng));
    auto q = parameter(random_tensor({r, extent(rng)}, rng));
    out.push_back(run("concat", {{"p", p}, {"q", q}}, [&] { return concat<D>({p, q}, 1); }, rng, eps));
  }
  {
    auto x = parameter(random_tensor({4, extent(rng), extent(rng)}, rng));
    const std::vector<std::size_t> idx{3, 0, 3};
    out.push_back(run("gather", {{"x", x}}, [&] { return gather(x, idx); }, rng, eps));
    out.push_back(run("reshape", {{"x", x}}, [&] { return reshape(x, {x.size()}); }, rng, eps));
    out.push_back(run("transpose_last", {{"x", x}}, [&] { return transpose_last(x); }, rng, eps));
  }
  {
    auto x = parameter(random_tensor({2, 2, 5, 5}, rng));
    auto w = parameter(random_tensor({3, 2, 3, 3}, rng));
    out.push_back(run("conv2d", {{"x", x}, {"w", w}}, [&] { return conv2d(x, w, 2, 1); }, rng, eps));
    auto gamma = parameter(random_tensor({2}, rng));
    auto beta = parameter(random_tensor({2}, rng));
    out.push_back(run("channel_norm", {{"x", x}, {"gamma", gamma}, {"beta", beta}},
                      [&] { return channel_norm(x, gamma, beta); }, rng, eps));
    out.push_back(run("spatial_mean", {{"x", x}}, [&] { return spatial_mean(x); }, rng, eps));
    auto s2 = parameter(random_tensor({2}, rng));
    out.push_back(run("scale_leading", {{"x", x}, {"s", s2}}, [&] { return scale_leading(x, s2); }, rng, eps));
  }
  return out;
}

}  // namespace akmnet::nn
