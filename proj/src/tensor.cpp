#include "chunkdec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace chunkdec {

const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::size_t rows, std::size_t cols,
                            std::initializer_list<T> values) {
  return Tensor({rows, cols}, std::vector<T>(values));
}

template <typename T>
Tensor<T> Tensor<T>::vector(std::initializer_list<T> values) {
  return Tensor({values.size()}, std::vector<T>(values));
}

namespace {

template <typename T>
void require_2d(const Tensor<T>& t, const char* op) {
  if (t.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected 2-D tensor, got " +
                         shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> c({m, n});
  // i-k-j order: every c[i][j] still accumulates over k in ascending order.
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c.data() + i * n;
    const T* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_2d(a, "transpose");
  Tensor<T> out({a.cols(), a.rows()});
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out.at(c, r) = a.at(r, c);
  return out;
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& logits, const BoolMatrix* mask) {
  require_2d(logits, "masked_softmax");
  const std::size_t tq = logits.rows(), tk = logits.cols();
  if (mask && (mask->rows < tq || mask->cols < tk)) {
    throw DimensionError("masked_softmax: mask " + std::to_string(mask->rows) + "x" +
                         std::to_string(mask->cols) + " does not cover logits " +
                         shape_str(logits.shape()));
  }
  constexpr T neg_inf = -std::numeric_limits<T>::infinity();
  Tensor<T> out(logits.shape());
  std::vector<T> row(tk);
  for (std::size_t q = 0; q < tq; ++q) {
    T row_max = neg_inf;
    for (std::size_t k = 0; k < tk; ++k) {
      row[k] = (mask && !(*mask)(q, k)) ? neg_inf : logits.at(q, k);
      row_max = std::max(row_max, row[k]);
    }
    if (tk > 0 && row_max == neg_inf) {
      throw std::domain_error("masked_softmax: query row " + std::to_string(q) +
                              " has no permitted key");
    }
    T sum = 0;
    for (std::size_t k = 0; k < tk; ++k) {
      row[k] = row[k] == neg_inf ? T(0) : std::exp(row[k] - row_max);
      sum += row[k];
    }
    for (std::size_t k = 0; k < tk; ++k) out.at(q, k) = row[k] / sum;
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps) {
  require_2d(x, "layer_norm");
  const std::size_t d = x.cols();
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: feature dim " + std::to_string(d) +
                         " vs gamma " + shape_str(gamma.shape()) + ", beta " +
                         shape_str(beta.shape()));
  }
  Tensor<T> out(x.shape());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto in = x.row(t);
    T mean = 0;
    for (auto v : in) mean += v;
    mean /= T(d);
    T var = 0;
    for (auto v : in) var += (v - mean) * (v - mean);
    var /= T(d);
    const T inv_std = T(1) / std::sqrt(var + eps);
    auto o = out.row(t);
    for (std::size_t j = 0; j < d; ++j) o[j] = (in[j] - mean) * inv_std * gamma[j] + beta[j];
  }
  return out;
}

template <typename T>
Tensor<T> causal_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_2d(x, "causal_conv1d");
  if (w.ndim() != 3 || w.dim(1) != x.cols() || b.numel() != w.dim(2)) {
    throw DimensionError("causal_conv1d: input " + shape_str(x.shape()) + ", weight " +
                         shape_str(w.shape()) + ", bias " + shape_str(b.shape()));
  }
  const std::size_t k = w.dim(0), din = w.dim(1), dout = w.dim(2);
  if (x.rows() < k) {
    throw DimensionError("causal_conv1d: input length " + std::to_string(x.rows()) +
                         " shorter than kernel " + std::to_string(k));
  }
  const std::size_t steps = x.rows() - (k - 1);
  Tensor<T> out({steps, dout});
  for (std::size_t t = 0; t < steps; ++t) {
    T* o = out.data() + t * dout;
    for (std::size_t c = 0; c < dout; ++c) o[c] = b[c];
    for (std::size_t j = 0; j < k; ++j) {
      const T* xin = x.data() + (t + j) * din;
      const T* wj = w.data() + j * din * dout;
      for (std::size_t i = 0; i < din; ++i) {
        const T xv = xin[i];
        const T* wrow = wj + i * dout;
        for (std::size_t c = 0; c < dout; ++c) o[c] += xv * wrow[c];
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat_time(const Tensor<T>& a, const Tensor<T>& b) {
  auto unshaped = [](const Tensor<T>& t) {
    return t.ndim() == 2 && t.rows() == 0 && t.cols() == 0;
  };
  if (unshaped(a)) return b;
  if (unshaped(b)) return a;
  if (a.ndim() != b.ndim() || a.ndim() == 0 ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw DimensionError("concat_time: feature dims differ, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<T> data;
  data.reserve(a.numel() + b.numel());
  data.insert(data.end(), a.values().begin(), a.values().end());
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> tail_slice(const Tensor<T>& x, std::size_t s) {
  if (x.ndim() == 0) throw DimensionError("tail_slice: scalar has no time axis");
  const std::size_t len = x.dim(0);
  if (s >= len) return x;
  Shape shape = x.shape();
  shape[0] = s;
  const std::size_t frame = len == 0 ? 0 : x.numel() / len;
  std::vector<T> data(x.values().end() - static_cast<std::ptrdiff_t>(s * frame),
                      x.values().end());
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_2d(x, "slice_cols");
  if (begin + count > x.cols()) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " +
                         shape_str(x.shape()));
  }
  Tensor<T> out({x.rows(), count});
  for (std::size_t r = 0; r < x.rows(); ++r)
    std::copy_n(x.data() + r * x.cols() + begin, count, out.data() + r * count);
  return out;
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row counts differ, " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    cols += p.cols();
  }
  Tensor<T> out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    T* dst = out.data() + r * cols;
    for (const auto& p : parts) dst = std::copy_n(p.data() + r * p.cols(), p.cols(), dst);
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_2d(x, "add_bias");
  if (bias.numel() != x.cols()) {
    throw DimensionError("add_bias: " + shape_str(x.shape()) + " with bias " +
                         shape_str(bias.shape()));
  }
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) = x.at(r, c) + bias[c];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * s;
  return out;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

#define CHUNKDEC_INSTANTIATE(T)                                                        \
  template class Tensor<T>;                                                            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> transpose(const Tensor<T>&);                                      \
  template Tensor<T> masked_softmax(const Tensor<T>&, const BoolMatrix*);              \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                T);                                                    \
  template Tensor<T> causal_conv1d(const Tensor<T>&, const Tensor<T>&,                 \
                                   const Tensor<T>&);                                  \
  template Tensor<T> concat_time(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> tail_slice(const Tensor<T>&, std::size_t);                        \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);           \
  template Tensor<T> concat_cols(std::span<const Tensor<T>>);                          \
  template Tensor<T> relu(const Tensor<T>&);                                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                       \
  template T max_abs_diff(const Tensor<T>&, const Tensor<T>&);

CHUNKDEC_INSTANTIATE(float)
CHUNKDEC_INSTANTIATE(double)

#undef CHUNKDEC_INSTANTIATE

}  // namespace chunkdec
