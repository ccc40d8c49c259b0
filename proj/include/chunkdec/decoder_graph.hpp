#pragma once

// Full-sequence decoder forward written once over an op backend, so the same
// code runs eagerly (inference, equivalence oracle) and on the autodiff tape
// (training). A backend provides matmul, transpose, scale, masked_softmax,
// concat_cols, add, add_bias, relu, layer_norm, causal_conv1d, concat_time,
// zeros and constant.

#include <cmath>
#include <vector>

#include "chunkdec/autodiff.hpp"
#include "chunkdec/decoder.hpp"

namespace chunkdec {

template <typename T>
struct EagerOps {
  using Value = Tensor<T>;
  using Scalar = T;

  Value matmul(const Value& a, const Value& b) { return chunkdec::matmul(a, b); }
  Value transpose(const Value& a) { return chunkdec::transpose(a); }
  Value scale(const Value& a, T s) { return chunkdec::scale(a, s); }
  Value masked_softmax(const Value& a, const BoolMatrix* m) {
    return chunkdec::masked_softmax(a, m);
  }
  Value concat_cols(const std::vector<Value>& parts) {
    return chunkdec::concat_cols(std::span<const Value>(parts));
  }
  Value add(const Value& a, const Value& b) { return chunkdec::add(a, b); }
  Value add_bias(const Value& a, const Value& b) { return chunkdec::add_bias(a, b); }
  Value relu(const Value& a) { return chunkdec::relu(a); }
  Value layer_norm(const Value& x, const Value& g, const Value& b, T eps) {
    return chunkdec::layer_norm(x, g, b, eps);
  }
  Value causal_conv1d(const Value& x, const Value& w, const Value& b) {
    return chunkdec::causal_conv1d(x, w, b);
  }
  Value concat_time(const Value& a, const Value& b) { return chunkdec::concat_time(a, b); }
  Value zeros(std::size_t r, std::size_t c) { return Value({r, c}); }
  Value constant(Tensor<T> t) { return t; }
};

struct TapeOps {
  using Value = ad::Var;
  using Scalar = double;

  ad::Tape& tape;

  Value matmul(Value a, Value b) { return tape.matmul(a, b); }
  Value transpose(Value a) { return tape.transpose(a); }
  Value scale(Value a, double s) { return tape.scale(a, s); }
  Value masked_softmax(Value a, const BoolMatrix* m) { return tape.masked_softmax(a, m); }
  Value concat_cols(const std::vector<Value>& parts) { return tape.concat_cols(parts); }
  Value add(Value a, Value b) { return tape.add(a, b); }
  Value add_bias(Value a, Value b) { return tape.add_bias(a, b); }
  Value relu(Value a) { return tape.relu(a); }
  Value layer_norm(Value x, Value g, Value b, double eps) {
    return tape.layer_norm(x, g, b, eps);
  }
  Value causal_conv1d(Value x, Value w, Value b) { return tape.causal_conv1d(x, w, b); }
  Value concat_time(Value a, Value b) { return tape.concat_time(a, b); }
  Value zeros(std::size_t r, std::size_t c) { return tape.zeros(r, c); }
  Value constant(Tensor<double> t) { return tape.constant(std::move(t)); }
};

namespace graph {

template <class Ops>
typename Ops::Scalar attention_scale(const DecoderConfig& cfg) {
  using S = typename Ops::Scalar;
  return S(1) / std::sqrt(S(cfg.d_head()));
}

template <class Ops, class V>
V attention(Ops& ops, const DecoderConfig& cfg, const V& x, const LayerParams<V>& w,
            const BoolMatrix* mask) {
  const auto s = attention_scale<Ops>(cfg);
  std::vector<V> heads;
  heads.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    V q = ops.matmul(x, w.wq[h]);
    V k = ops.matmul(x, w.wk[h]);
    V v = ops.matmul(x, w.wv[h]);
    V p = ops.masked_softmax(ops.scale(ops.matmul(q, ops.transpose(k)), s), mask);
    heads.push_back(ops.matmul(p, v));
  }
  return ops.matmul(ops.concat_cols(heads), w.wo);
}

template <class Ops, class V>
V feed_forward(Ops& ops, const DecoderConfig& cfg, const V& x, const LayerParams<V>& w) {
  V c1 = ops.concat_time(ops.zeros(cfg.kernel1 - 1, cfg.d_model), x);
  V o1 = ops.relu(ops.causal_conv1d(c1, w.conv1_w, w.conv1_b));
  V c2 = ops.concat_time(ops.zeros(cfg.kernel2 - 1, cfg.d_ff), o1);
  return ops.relu(ops.causal_conv1d(c2, w.conv2_w, w.conv2_b));
}

template <class Ops, class V>
V fft_block(Ops& ops, const DecoderConfig& cfg, const V& x, const LayerParams<V>& w,
            const BoolMatrix* mask, V* attention_tap = nullptr) {
  const auto eps = static_cast<typename Ops::Scalar>(cfg.eps_ln);
  V a = attention(ops, cfg, x, w, mask);
  if (attention_tap) *attention_tap = a;
  V r1 = ops.layer_norm(ops.add(x, a), w.ln1_gamma, w.ln1_beta, eps);
  V r2 = feed_forward(ops, cfg, r1, w);
  return ops.layer_norm(ops.add(r1, r2), w.ln2_gamma, w.ln2_beta, eps);
}

// features [T x d_model] -> Mel [T x mel_bins]
template <class Ops, class V>
V decoder_forward(Ops& ops, const DecoderConfig& cfg, const DecoderParams<V>& p,
                  const V& features, std::size_t frames, const BoolMatrix* mask,
                  std::vector<V>* attention_taps = nullptr) {
  using S = typename Ops::Scalar;
  V x = ops.add(features, ops.constant(positional_encoding<S>(0, frames, cfg.d_model)));
  for (const auto& layer : p.layers) {
    V tap{};
    x = fft_block(ops, cfg, x, layer, mask, attention_taps ? &tap : nullptr);
    if (attention_taps) attention_taps->push_back(tap);
  }
  return ops.add_bias(ops.matmul(x, p.proj_w), p.proj_b);
}

}  // namespace graph

}  // namespace chunkdec
