#include "akmnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace akmnet::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_same(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

template <typename T>
void require_rank(const char* op, const Var<T>& x, std::size_t rank) {
  if (x.shape().size() != rank) throw ShapeError(op, x.shape(), Shape(rank, 0));
}

// df receives (input, output) so each rule can use whichever is cheaper.
template <typename T, typename F>
Var<T> unary(const char* op, const Var<T>& x, F&& f, T (*df)(T in, T out)) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x.value()[i]);
  return make_op<T>(op, std::move(out), {x}, [df](Node<T>& self) {
    Tensor<T>* gx = self.input_grad(0);
    if (!gx) return;
    const auto& in = self.inputs[0]->value;
    for (std::size_t i = 0; i < gx->size(); ++i) {
      (*gx)[i] += self.grad[i] * df(in[i], self.value[i]);
    }
  });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same("add", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_op<T>("add", std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Tensor<T>* g = self.input_grad(k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same("sub", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_op<T>("sub", std::move(out), {a, b}, [](Node<T>& self) {
    if (Tensor<T>* g = self.input_grad(0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor<T>* g = self.input_grad(1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same("mul", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op<T>("mul", std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (Tensor<T>* g = self.input_grad(0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (Tensor<T>* g = self.input_grad(1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * factor;
  return make_op<T>("scale", std::move(out), {a}, [factor](Node<T>& self) {
    if (Tensor<T>* g = self.input_grad(0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
    }
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T offset) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + offset;
  return make_op<T>("add_scalar", std::move(out), {a}, [](Node<T>& self) {
    if (Tensor<T>* g = self.input_grad(0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<T> out({m, n});
  MapMat<T>(out.data(), m, n).noalias() =
      CMapMat<T>(a.value().data(), m, k) * CMapMat<T>(b.value().data(), k, n);
  return make_op<T>("matmul", std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    CMapMat<T> g(self.grad.data(), m, n);
    if (Tensor<T>* ga = self.input_grad(0)) {
      MapMat<T>(ga->data(), m, k).noalias() +=
          g * CMapMat<T>(self.inputs[1]->value.data(), k, n).transpose();
    }
    if (Tensor<T>* gb = self.input_grad(1)) {
      MapMat<T>(gb->data(), k, n).noalias() +=
          CMapMat<T>(self.inputs[0]->value.data(), m, k).transpose() * g;
    }
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  if (x.shape().empty() || bias.shape().size() != 1 || bias.shape()[0] != x.shape().back()) {
    throw ShapeError("add_bias", x.shape(), bias.shape());
  }
  const std::size_t n = bias.shape()[0];
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.value()[i % n];
  return make_op<T>("add_bias", std::move(out), {x, bias}, [n](Node<T>& self) {
    if (Tensor<T>* g = self.input_grad(0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor<T>* g = self.input_grad(1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i % n] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> affine(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  return add_bias(matmul(x, weight), bias);
}

namespace {
template <typename T>
T sigmoid_scalar(T v) {
  // Split by sign so exp never overflows.
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}
}  // namespace

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary<T>(
      "sigmoid", x, [](T v) { return sigmoid_scalar(v); },
      +[](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, +[](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      +[](T in, T) { return in > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  if (x.shape().empty()) throw ShapeError("softmax", x.shape(), Shape{1});
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.value().data() + r * n;
    T* o = out.data() + r * n;
    const T peak = *std::max_element(in, in + n);
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) total += (o[i] = std::exp(in[i] - peak));
    for (std::size_t i = 0; i < n; ++i) o[i] /= total;
  }
  return make_op<T>("softmax", std::move(out), {x}, [n, rows](Node<T>& self) {
    Tensor<T>* gx = self.input_grad(0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * n;
      const T* g = self.grad.data() + r * n;
      T dot = 0;
      for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
      for (std::size_t i = 0; i < n; ++i) (*gx)[r * n + i] += y[i] * (g[i] - dot);
    }
  });
}

template <typename T>
Var<T> log_softmax(const Var<T>& x) {
  if (x.shape().empty()) throw ShapeError("log_softmax", x.shape(), Shape{1});
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.value().data() + r * n;
    T* o = out.data() + r * n;
    const T peak = *std::max_element(in, in + n);
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) total += std::exp(in[i] - peak);
    const T log_z = peak + std::log(total);
    for (std::size_t i = 0; i < n; ++i) o[i] = in[i] - log_z;
  }
  return make_op<T>("log_softmax", std::move(out), {x}, [n, rows](Node<T>& self) {
    Tensor<T>* gx = self.input_grad(0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * n;
      const T* g = self.grad.data() + r * n;
      T total = 0;
      for (std::size_t i = 0; i < n; ++i) total += g[i];
      for (std::size_t i = 0; i < n; ++i) (*gx)[r * n + i] += g[i] - std::exp(y[i]) * total;
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = 0;
  for (auto v : x.value().values()) total += v;
  return make_op<T>("sum", Tensor<T>::scalar(total), {x}, [](Node<T>& self) {
    if (Tensor<T>* g = self.input_grad(0)) {
      const T up = self.grad[0];
      for (auto& v : g->values()) v += up;
    }
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  T total = 0;
  for (auto v : x.value().values()) total += v;
  const T inv = T(1) / static_cast<T>(x.size());
  return make_op<T>("mean", Tensor<T>::scalar(total * inv), {x}, [inv](Node<T>& self) {
    if (Tensor<T>* g = self.input_grad(0)) {
      const T up = self.grad[0] * inv;
      for (auto& v : g->values()) v += up;
    }
  });
}

template <typename T>
Var<T> max(const Var<T>& x) {
  const auto vals = x.value().values();
  const std::size_t arg =
      static_cast<std::size_t>(std::max_element(vals.begin(), vals.end()) - vals.begin());
  return make_op<T>("max", Tensor<T>::scalar(vals[arg]), {x}, [arg](Node<T>& self) {
    if (Tensor<T>* g = self.input_grad(0)) (*g)[arg] += self.grad[0];
  });
}

template <typename T>
Var<T> l2_norm(const Var<T>& x) {
  T sq = 0;
  for (auto v : x.value().values()) sq += v * v;
  const T norm = std::sqrt(sq);
  return make_op<T>("l2_norm", Tensor<T>::scalar(norm), {x}, [norm](Node<T>& self) {
    Tensor<T>* g = self.input_grad(0);
    if (!g || norm == T(0)) return;
    const T up = self.grad[0] / norm;
    const auto& in = self.inputs[0]->value;
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += up * in[i];
  });
}

template <typename T>
Var<T> cosine_similarity(const Var<T>& rows, const Var<T>& v, T eps) {
  if (rows.shape().size() != 2 || v.shape().size() != 1 || rows.shape()[1] != v.shape()[0]) {
    throw ShapeError("cosine_similarity", rows.shape(), v.shape());
  }
  const std::size_t r_count = rows.shape()[0], c = rows.shape()[1];
  const T* vv = v.value().data();
  T v_sq = 0;
  for (std::size_t j = 0; j < c; ++j) v_sq += vv[j] * vv[j];
  const T v_norm = std::sqrt(v_sq);

  std::vector<T> row_norm(r_count), denom(r_count);
  Tensor<T> out({r_count});
  for (std::size_t r = 0; r < r_count; ++r) {
    const T* x = rows.value().data() + r * c;
    T dot = 0, sq = 0;
    for (std::size_t j = 0; j < c; ++j) {
      dot += x[j] * vv[j];
      sq += x[j] * x[j];
    }
    row_norm[r] = std::sqrt(sq);
    denom[r] = std::max(row_norm[r] * v_norm, eps);
    // The clamp only absorbs rounding past +-1 on (anti)parallel vectors.
    out[r] = (row_norm[r] == T(0) || v_norm == T(0)) ? T(0) : std::clamp(dot / denom[r], T(-1), T(1));
  }
  return make_op<T>(
      "cosine_similarity", std::move(out), {rows, v},
      [r_count, c, v_norm, row_norm, denom, eps](Node<T>& self) {
        const T* x_all = self.inputs[0]->value.data();
        const T* vv = self.inputs[1]->value.data();
        Tensor<T>* gx = self.input_grad(0);
        Tensor<T>* gv = self.input_grad(1);
        for (std::size_t r = 0; r < r_count; ++r) {
          if (row_norm[r] == T(0) || v_norm == T(0)) continue;
          const T up = self.grad[r];
          const T beta = self.value[r];
          const T* x = x_all + r * c;
          // Below eps the denominator is a constant, so only the dot term remains.
          const bool clamped = row_norm[r] * v_norm < eps;
          const T inv = up / denom[r];
          const T row_term = clamped ? T(0) : up * beta / (row_norm[r] * row_norm[r]);
          const T v_term = clamped ? T(0) : up * beta / (v_norm * v_norm);
          for (std::size_t j = 0; j < c; ++j) {
            if (gx) (*gx)[r * c + j] += inv * vv[j] - row_term * x[j];
            if (gv) (*gv)[j] += inv * x[j] - v_term * vv[j];
          }
        }
      });
}

template <typename T>
Var<T> row_dot(const Var<T>& rows, const Var<T>& v) {
  if (rows.shape().size() != 2 || v.shape().size() != 1 || rows.shape()[1] != v.shape()[0]) {
    throw ShapeError("row_dot", rows.shape(), v.shape());
  }
  const std::size_t r_count = rows.shape()[0], c = rows.shape()[1];
  const T* x = rows.value().data();
  const T* vv = v.value().data();
  Tensor<T> out({r_count});
  for (std::size_t r = 0; r < r_count; ++r) {
    T dot = 0;
    for (std::size_t j = 0; j < c; ++j) dot += x[r * c + j] * vv[j];
    out[r] = dot;
  }
  return make_op<T>("row_dot", std::move(out), {rows, v}, [r_count, c](Node<T>& self) {
    const T* x = self.inputs[0]->value.data();
    const T* vv = self.inputs[1]->value.data();
    Tensor<T>* gx = self.input_grad(0);
    Tensor<T>* gv = self.input_grad(1);
    for (std::size_t r = 0; r < r_count; ++r) {
      const T up = self.grad[r];
      for (std::size_t j = 0; j < c; ++j) {
        if (gx) (*gx)[r * c + j] += up * vv[j];
        if (gv) (*gv)[j] += up * x[r * c + j];
      }
    }
  });
}

template <typename T>
T sorted_sum(std::vector<T> values) {
  // NaNs sort last so the comparator stays a strict weak order.
  std::sort(values.begin(), values.end(), [](T a, T b) { return !std::isnan(a) && (std::isnan(b) || a < b); });
  T total = 0;
  for (T v : values) total += v;
  return total;
}

template <typename T>
Var<T> weighted_row_sum(const Var<T>& rows, const Var<T>& w) {
  if (rows.shape().size() != 2 || w.shape() != Shape{rows.shape()[0]}) {
    throw ShapeError("weighted_row_sum", rows.shape(), w.shape());
  }
  const std::size_t r_count = rows.shape()[0], c = rows.shape()[1];
  const T* x = rows.value().data();
  const T* ww = w.value().data();
  Tensor<T> out({c});
  std::vector<T> terms(r_count);
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t r = 0; r < r_count; ++r) terms[r] = ww[r] * x[r * c + j];
    out[j] = sorted_sum(terms);
  }
  return make_op<T>("weighted_row_sum", std::move(out), {rows, w}, [r_count, c](Node<T>& self) {
    const T* x = self.inputs[0]->value.data();
    const T* ww = self.inputs[1]->value.data();
    Tensor<T>* gx = self.input_grad(0);
    Tensor<T>* gw = self.input_grad(1);
    for (std::size_t r = 0; r < r_count; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        const T up = self.grad[j];
        if (gx) (*gx)[r * c + j] += up * ww[r];
        if (gw) (*gw)[r] += up * x[r * c + j];
      }
    }
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat", first, Shape{axis});
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat", first, s);
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) throw ShapeError("concat", first, s);
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * inner);
  const std::size_t row = out_shape[axis] * inner;

  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].value().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * widths[k], src + (o + 1) * widths[k], out.data() + o * row + offset);
    }
    offset += widths[k];
  }
  return make_op<T>("concat", std::move(out), parts, [outer, row, widths](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (Tensor<T>* g = self.input_grad(k)) {
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < widths[k]; ++i) {
            (*g)[o * widths[k] + i] += self.grad[o * row + offset + i];
          }
        }
      }
      offset += widths[k];
    }
  });
}

template <typename T>
Var<T> gather(const Var<T>& x, const std::vector<std::size_t>& indices) {
  if (x.shape().empty() || indices.empty()) throw ShapeError("gather", x.shape(), Shape{indices.size()});
  const std::size_t rows = x.shape()[0];
  const std::size_t stride = x.size() / rows;
  Shape out_shape = x.shape();
  out_shape[0] = indices.size();
  Tensor<T> out(out_shape);
  for (std::size_t n = 0; n < indices.size(); ++n) {
    if (indices[n] >= rows) throw ShapeError("gather", x.shape(), Shape{indices[n]});
    const T* src = x.value().data() + indices[n] * stride;
    std::copy(src, src + stride, out.data() + n * stride);
  }
  return make_op<T>("gather", std::move(out), {x}, [indices, stride](Node<T>& self) {
    Tensor<T>* g = self.input_grad(0);
    if (!g) return;
    for (std::size_t n = 0; n < indices.size(); ++n) {
      for (std::size_t i = 0; i < stride; ++i) {
        (*g)[indices[n] * stride + i] += self.grad[n * stride + i];
      }
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (shape_size(shape) != x.size()) throw ShapeError("reshape", x.shape(), shape);
  return make_op<T>("reshape", x.value().reshaped(std::move(shape)), {x}, [](Node<T>& self) {
    if (Tensor<T>* g = self.input_grad(0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> transpose_last(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("transpose_last", s, Shape{0, 0});
  const std::size_t rows = s[s.size() - 2], cols = s.back();
  const std::size_t batch = x.size() / (rows * cols);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  Tensor<T> out(out_shape);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = x.value().data() + b * rows * cols;
    T* dst = out.data() + b * rows * cols;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
  }
  return make_op<T>("transpose_last", std::move(out), {x}, [batch, rows, cols](Node<T>& self) {
    Tensor<T>* g = self.input_grad(0);
    if (!g) return;
    for (std::size_t b = 0; b < batch; ++b) {
      T* dst = g->data() + b * rows * cols;
      const T* src = self.grad.data() + b * rows * cols;
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) dst[i * cols + j] += src[j * rows + i];
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t batch, in_ch, height, width, out_ch, kernel, stride, pad, out_h, out_w;
  std::size_t patch() const { return in_ch * kernel * kernel; }
  std::size_t plane() const { return out_h * out_w; }
};

// col[(ci,ky,kx), (b,oy,ox)]
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const std::size_t cols = g.batch * g.plane();
  for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* dst = col + ((ci * g.kernel + ky) * g.kernel + kx) * cols;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const T* plane = x + (b * g.in_ch + ci) * g.height * g.width;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            T* row = dst + b * g.plane() + oy * g.out_w;
            if (iy < 0 || iy >= static_cast<long>(g.height)) {
              std::fill(row, row + g.out_w, T(0));
              continue;
            }
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              row[ox] = (ix < 0 || ix >= static_cast<long>(g.width))
                            ? T(0)
                            : plane[static_cast<std::size_t>(iy) * g.width + static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* x) {
  const std::size_t cols = g.batch * g.plane();
  for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* src = col + ((ci * g.kernel + ky) * g.kernel + kx) * cols;
        for (std::size_t b = 0; b < g.batch; ++b) {
          T* plane = x + (b * g.in_ch + ci) * g.height * g.width;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
            const T* row = src + b * g.plane() + oy * g.out_w;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
              plane[static_cast<std::size_t>(iy) * g.width + static_cast<std::size_t>(ix)] += row[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, std::size_t stride, std::size_t padding) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || stride == 0) {
    throw ShapeError("conv2d", xs, ws);
  }
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, padding, 0, 0};
  if (xs[2] + 2 * padding < g.kernel || xs[3] + 2 * padding < g.kernel) throw ShapeError("conv2d", xs, ws);
  g.out_h = (g.height + 2 * padding - g.kernel) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kernel) / stride + 1;

  const std::size_t cols = g.batch * g.plane();
  std::vector<T> col(g.patch() * cols);
  im2col(g, x.value().data(), col.data());

  // One product per frame: a batched product may take different kernel
  // paths for edge columns, and a frame's output must not depend on its
  // position in the batch.
  Tensor<T> out({g.batch, g.out_ch, g.out_h, g.out_w});
  const CMapMat<T> w(weight.value().data(), g.out_ch, g.patch());
  const CMapMat<T> col_all(col.data(), g.patch(), cols);
  for (std::size_t b = 0; b < g.batch; ++b) {
    MapMat<T>(out.data() + b * g.out_ch * g.plane(), g.out_ch, g.plane()).noalias() =
        w * col_all.middleCols(b * g.plane(), g.plane());
  }

  return make_op<T>("conv2d", std::move(out), {x, weight},
                    [g, col = std::move(col)](Node<T>& self) {
                      const std::size_t cols = g.batch * g.plane();
                      RowMat<T> dout(g.out_ch, cols);
                      for (std::size_t b = 0; b < g.batch; ++b)
                        for (std::size_t co = 0; co < g.out_ch; ++co)
                          std::copy(self.grad.data() + (b * g.out_ch + co) * g.plane(),
                                    self.grad.data() + (b * g.out_ch + co + 1) * g.plane(),
                                    dout.data() + co * cols + b * g.plane());
                      if (Tensor<T>* gw = self.input_grad(1)) {
                        MapMat<T>(gw->data(), g.out_ch, g.patch()).noalias() +=
                            dout * CMapMat<T>(col.data(), g.patch(), cols).transpose();
                      }
                      if (Tensor<T>* gx = self.input_grad(0)) {
                        RowMat<T> dcol =
                            CMapMat<T>(self.inputs[1]->value.data(), g.out_ch, g.patch())
                                .transpose() *
                            dout;
                        col2im_add(g, dcol.data(), gx->data());
                      }
                    });
}

template <typename T>
Var<T> channel_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("channel_norm", xs, Shape{0, 0, 0, 0});
  const std::size_t batch = xs[0], ch = xs[1], plane = xs[2] * xs[3];
  if (gamma.shape() != Shape{ch}) throw ShapeError("channel_norm", xs, gamma.shape());
  if (beta.shape() != Shape{ch}) throw ShapeError("channel_norm", xs, beta.shape());

  Tensor<T> normed(xs);
  std::vector<T> inv_std(batch * ch);
  Tensor<T> out(xs);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (b * ch + c) * plane;
      const T* in = x.value().data() + base;
      T mu = 0;
      for (std::size_t i = 0; i < plane; ++i) mu += in[i];
      mu /= static_cast<T>(plane);
      T var = 0;
      for (std::size_t i = 0; i < plane; ++i) var += (in[i] - mu) * (in[i] - mu);
      var /= static_cast<T>(plane);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[b * ch + c] = is;
      for (std::size_t i = 0; i < plane; ++i) {
        normed[base + i] = (in[i] - mu) * is;
        out[base + i] = gamma.value()[c] * normed[base + i] + beta.value()[c];
      }
    }
  }
  return make_op<T>(
      "channel_norm", std::move(out), {x, gamma, beta},
      [batch, ch, plane, normed = std::move(normed), inv_std = std::move(inv_std)](Node<T>& self) {
        Tensor<T>* gx = self.input_grad(0);
        Tensor<T>* gg = self.input_grad(1);
        Tensor<T>* gb = self.input_grad(2);
        const auto& gamma = self.inputs[1]->value;
        const T inv_n = T(1) / static_cast<T>(plane);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t base = (b * ch + c) * plane;
            const T* up = self.grad.data() + base;
            const T* xh = normed.data() + base;
            T sum_up = 0, sum_up_xh = 0;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_up += up[i];
              sum_up_xh += up[i] * xh[i];
            }
            if (gg) (*gg)[c] += sum_up_xh;
            if (gb) (*gb)[c] += sum_up;
            if (gx) {
              const T k = gamma[c] * inv_std[b * ch + c];
              for (std::size_t i = 0; i < plane; ++i) {
                (*gx)[base + i] += k * (up[i] - inv_n * sum_up - xh[i] * inv_n * sum_up_xh);
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> spatial_mean(const Var<T>& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("spatial_mean", xs, Shape{0, 0, 0, 0});
  const std::size_t batch = xs[0], ch = xs[1], plane = xs[2] * xs[3];
  Tensor<T> out({batch, ch});
  for (std::size_t k = 0; k < batch * ch; ++k) {
    T total = 0;
    const T* in = x.value().data() + k * plane;
    for (std::size_t i = 0; i < plane; ++i) total += in[i];
    out[k] = total / static_cast<T>(plane);
  }
  return make_op<T>("spatial_mean", std::move(out), {x}, [batch, ch, plane](Node<T>& self) {
    Tensor<T>* g = self.input_grad(0);
    if (!g) return;
    const T inv = T(1) / static_cast<T>(plane);
    for (std::size_t k = 0; k < batch * ch; ++k) {
      const T up = self.grad[k] * inv;
      for (std::size_t i = 0; i < plane; ++i) (*g)[k * plane + i] += up;
    }
  });
}

template <typename T>
Var<T> scale_leading(const Var<T>& x, const Var<T>& s) {
  if (x.shape().empty() || s.shape() != Shape{x.shape()[0]}) {
    throw ShapeError("scale_leading", x.shape(), s.shape());
  }
  const std::size_t rows = x.shape()[0];
  const std::size_t stride = x.size() / rows;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < stride; ++i)
      out[r * stride + i] = x.value()[r * stride + i] * s.value()[r];
  return make_op<T>("scale_leading", std::move(out), {x, s}, [rows, stride](Node<T>& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& sv = self.inputs[1]->value;
    Tensor<T>* gx = self.input_grad(0);
    Tensor<T>* gs = self.input_grad(1);
    for (std::size_t r = 0; r < rows; ++r) {
      T acc = 0;
      for (std::size_t i = 0; i < stride; ++i) {
        const std::size_t k = r * stride + i;
        if (gx) (*gx)[k] += self.grad[k] * sv[r];
        acc += self.grad[k] * xv[k];
      }
      if (gs) (*gs)[r] += acc;
    }
  });
}

#define AKMNET_OPS(T)                                                                         \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                       \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                       \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                       \
  template Var<T> scale<T>(const Var<T>&, T);                                                 \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                            \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> add_bias<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> affine<T>(const Var<T>&, const Var<T>&, const Var<T>&);                     \
  template Var<T> sigmoid<T>(const Var<T>&);                                                  \
  template Var<T> tanh<T>(const Var<T>&);                                                     \
  template Var<T> relu<T>(const Var<T>&);                                                     \
  template Var<T> softmax<T>(const Var<T>&);                                                  \
  template Var<T> log_softmax<T>(const Var<T>&);                                              \
  template Var<T> sum<T>(const Var<T>&);                                                      \
  template Var<T> mean<T>(const Var<T>&);                                                     \
  template Var<T> max<T>(const Var<T>&);                                                      \
  template Var<T> l2_norm<T>(const Var<T>&);                                                  \
  template Var<T> cosine_similarity<T>(const Var<T>&, const Var<T>&, T);                      \
  template Var<T> row_dot<T>(const Var<T>&, const Var<T>&);                                   \
  template Var<T> weighted_row_sum<T>(const Var<T>&, const Var<T>&);                          \
  template T sorted_sum<T>(std::vector<T>);                                                   \
  template Var<T> concat<T>(const std::vector<Var<T>>&, std::size_t);                         \
  template Var<T> gather<T>(const Var<T>&, const std::vector<std::size_t>&);                  \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                           \
  template Var<T> transpose_last<T>(const Var<T>&);                                           \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, std::size_t, std::size_t);          \
  template Var<T> channel_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);            \
  template Var<T> spatial_mean<T>(const Var<T>&);                                             \
  template Var<T> scale_leading<T>(const Var<T>&, const Var<T>&);

AKMNET_OPS(float)
AKMNET_OPS(double)
AKMNET_OPS(long double)

}  // namespace akmnet::nn
