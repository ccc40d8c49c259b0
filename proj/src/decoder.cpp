#include "chunkdec/decoder.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "chunkdec/decoder_graph.hpp"

namespace chunkdec {

void DecoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("decoder config: " + msg); };
  if (layers < 1) fail("layers must be >= 1");
  if (heads < 1) fail("heads must be >= 1");
  if (d_model < 1 || d_model % heads != 0) fail("d_model must be a positive multiple of heads");
  if (kernel1 < 1 || kernel2 < 1) fail("kernel sizes must be >= 1");
  if (d_ff < 1) fail("d_ff must be >= 1");
  if (chunk_size < 1) fail("chunk_size must be >= 1");
  if (mel_bins < 1) fail("mel_bins must be >= 1");
  if (!(eps_ln > 0)) fail("eps_ln must be > 0");
}

namespace {

template <typename T>
Tensor<T> glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
void check_chunk(const DecoderConfig& cfg, const Tensor<T>& x, const char* op) {
  if (x.ndim() != 2 || x.cols() != cfg.d_model) {
    throw DimensionError(std::string(op) + ": chunk " + shape_str(x.shape()) +
                         " does not match d_model " + std::to_string(cfg.d_model));
  }
  if (x.rows() == 0) throw DimensionError(std::string(op) + ": empty chunk");
}

std::size_t keep_frames(const PastSize& past, std::size_t available) {
  return past.clamp(available);
}

}  // namespace

template <typename T>
DecoderWeights<T> init_weights(const DecoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg.d_model, dh = cfg.d_head();
  DecoderWeights<T> w;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    LayerWeights<T> L;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      L.wq.push_back(glorot<T>({d, dh}, d, dh, rng));
      L.wk.push_back(glorot<T>({d, dh}, d, dh, rng));
      L.wv.push_back(glorot<T>({d, dh}, d, dh, rng));
    }
    L.wo = glorot<T>({d, d}, d, d, rng);
    L.conv1_w = glorot<T>({cfg.kernel1, d, cfg.d_ff}, cfg.kernel1 * d, cfg.kernel1 * cfg.d_ff, rng);
    L.conv1_b = Tensor<T>({cfg.d_ff});
    L.conv2_w = glorot<T>({cfg.kernel2, cfg.d_ff, d}, cfg.kernel2 * cfg.d_ff, cfg.kernel2 * d, rng);
    L.conv2_b = Tensor<T>({d});
    L.ln1_gamma = Tensor<T>({d}, T(1));
    L.ln1_beta = Tensor<T>({d});
    L.ln2_gamma = Tensor<T>({d}, T(1));
    L.ln2_beta = Tensor<T>({d});
    w.layers.push_back(std::move(L));
  }
  w.proj_w = glorot<T>({d, cfg.mel_bins}, d, cfg.mel_bins, rng);
  w.proj_b = Tensor<T>({cfg.mel_bins});
  return w;
}

template <typename T>
std::map<std::string, Tensor<T>> named_tensors(const DecoderWeights<T>& w) {
  std::map<std::string, Tensor<T>> out;
  visit_named(w, [&](const std::string& name, const Tensor<T>& t) { out.emplace(name, t); });
  return out;
}

template <typename T>
DecoderWeights<T> weights_from_named(const DecoderConfig& cfg,
                                     const std::map<std::string, Tensor<T>>& named) {
  // Start from a correctly shaped skeleton and fill by name, checking shapes.
  DecoderWeights<T> w = init_weights<T>(cfg, 0);
  std::size_t used = 0;
  auto fill = [&](const std::string& name, Tensor<T>& slot) {
    auto it = named.find(name);
    if (it == named.end()) throw std::invalid_argument("weights: missing tensor '" + name + "'");
    if (it->second.shape() != slot.shape()) {
      throw DimensionError("weights: tensor '" + name + "' has shape " +
                           shape_str(it->second.shape()) + ", expected " +
                           shape_str(slot.shape()));
    }
    slot = it->second;
    ++used;
  };
  visit_named(w, fill);
  if (used != named.size()) {
    throw std::invalid_argument("weights: " + std::to_string(named.size() - used) +
                                " unexpected tensor(s)");
  }
  return w;
}

template <typename To, typename From>
DecoderWeights<To> cast_weights(const DecoderWeights<From>& w) {
  auto c = [](const Tensor<From>& t) { return t.template cast<To>(); };
  DecoderWeights<To> out;
  for (const auto& L : w.layers) {
    LayerWeights<To> o;
    for (const auto& t : L.wq) o.wq.push_back(c(t));
    for (const auto& t : L.wk) o.wk.push_back(c(t));
    for (const auto& t : L.wv) o.wv.push_back(c(t));
    o.wo = c(L.wo);
    o.conv1_w = c(L.conv1_w);
    o.conv1_b = c(L.conv1_b);
    o.conv2_w = c(L.conv2_w);
    o.conv2_b = c(L.conv2_b);
    o.ln1_gamma = c(L.ln1_gamma);
    o.ln1_beta = c(L.ln1_beta);
    o.ln2_gamma = c(L.ln2_gamma);
    o.ln2_beta = c(L.ln2_beta);
    out.layers.push_back(std::move(o));
  }
  out.proj_w = c(w.proj_w);
  out.proj_b = c(w.proj_b);
  return out;
}

template <typename T>
bool DecoderState<T>::operator==(const DecoderState& other) const {
  if (frame_offset != other.frame_offset || layers.size() != other.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& a = layers[l];
    const auto& b = other.layers[l];
    if (a.attn.pk != b.attn.pk || a.attn.pv != b.attn.pv || a.conv.pc1 != b.conv.pc1 ||
        a.conv.pc2 != b.conv.pc2) {
      return false;
    }
  }
  return true;
}

template <typename T>
AttentionState<T> empty_attention_state(const DecoderConfig& cfg) {
  AttentionState<T> st;
  st.pk.assign(cfg.heads, Tensor<T>({0, cfg.d_head()}));
  st.pv.assign(cfg.heads, Tensor<T>({0, cfg.d_head()}));
  return st;
}

template <typename T>
ConvState<T> zero_conv_state(const DecoderConfig& cfg) {
  return {Tensor<T>({cfg.kernel1 - 1, cfg.d_model}), Tensor<T>({cfg.kernel2 - 1, cfg.d_ff})};
}

template <typename T>
DecoderState<T> initial_state(const DecoderConfig& cfg) {
  DecoderState<T> st;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    st.layers.push_back({empty_attention_state<T>(cfg), zero_conv_state<T>(cfg)});
  }
  return st;
}

template <typename T>
Tensor<T> positional_encoding(std::uint64_t offset, std::size_t length, std::size_t d_model) {
  Tensor<T> pe({length, d_model});
  for (std::size_t t = 0; t < length; ++t) {
    const double pos = static_cast<double>(offset + t);
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / double(d_model));
      pe.at(t, i) = static_cast<T>(std::sin(pos * freq));
      if (i + 1 < d_model) pe.at(t, i + 1) = static_cast<T>(std::cos(pos * freq));
    }
  }
  return pe;
}

template <typename T>
Tensor<T> mha_chunk_step(const DecoderConfig& cfg, const Tensor<T>& x,
                         const LayerWeights<T>& w, AttentionState<T>& st) {
  check_chunk(cfg, x, "mha_chunk_step");
  if (st.pk.size() != cfg.heads || st.pv.size() != cfg.heads) {
    throw DimensionError("mha_chunk_step: attention state has " + std::to_string(st.pk.size()) +
                         " heads, config has " + std::to_string(cfg.heads));
  }
  const T s = graph::attention_scale<EagerOps<T>>(cfg);
  std::vector<Tensor<T>> heads;
  heads.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Tensor<T> q = matmul(x, w.wq[h]);
    Tensor<T> k = concat_time(st.pk[h], matmul(x, w.wk[h]));
    Tensor<T> v = concat_time(st.pv[h], matmul(x, w.wv[h]));
    // Every query in the chunk sees the whole cache plus the whole chunk.
    Tensor<T> p = masked_softmax(scale(matmul(q, transpose(k)), s));
    heads.push_back(matmul(p, v));
    st.pk[h] = tail_slice(k, keep_frames(cfg.past, k.rows()));
    st.pv[h] = tail_slice(v, keep_frames(cfg.past, v.rows()));
  }
  return matmul(concat_cols(std::span<const Tensor<T>>(heads)), w.wo);
}

template <typename T>
Tensor<T> ffn_chunk_step(const DecoderConfig& cfg, const Tensor<T>& x,
                         const LayerWeights<T>& w, ConvState<T>& st) {
  if (st.pc1.rows() != cfg.kernel1 - 1 || st.pc2.rows() != cfg.kernel2 - 1) {
    throw DimensionError("ffn_chunk_step: conv state lengths " + shape_str(st.pc1.shape()) +
                         ", " + shape_str(st.pc2.shape()) + " do not match kernels");
  }
  Tensor<T> c1 = concat_time(st.pc1, x);
  Tensor<T> o1 = relu(causal_conv1d(c1, w.conv1_w, w.conv1_b));
  Tensor<T> c2 = concat_time(st.pc2, o1);
  Tensor<T> o2 = relu(causal_conv1d(c2, w.conv2_w, w.conv2_b));
  st.pc1 = tail_slice(c1, cfg.kernel1 - 1);
  st.pc2 = tail_slice(c2, cfg.kernel2 - 1);
  return o2;
}

template <typename T>
Tensor<T> fft_block_step(const DecoderConfig& cfg, const Tensor<T>& x,
                         const LayerWeights<T>& w, LayerState<T>& st) {
  const T eps = static_cast<T>(cfg.eps_ln);
  Tensor<T> a = mha_chunk_step(cfg, x, w, st.attn);
  Tensor<T> r1 = layer_norm(add(x, a), w.ln1_gamma, w.ln1_beta, eps);
  Tensor<T> r2 = ffn_chunk_step(cfg, r1, w, st.conv);
  return layer_norm(add(r1, r2), w.ln2_gamma, w.ln2_beta, eps);
}

template <typename T>
StreamingDecoder<T>::StreamingDecoder(const DecoderConfig& cfg, const DecoderWeights<T>& weights)
    : StreamingDecoder(cfg, weights, initial_state<T>(cfg)) {}

template <typename T>
StreamingDecoder<T>::StreamingDecoder(const DecoderConfig& cfg, const DecoderWeights<T>& weights,
                                      DecoderState<T> state)
    : cfg_(cfg), weights_(weights), state_(std::move(state)) {
  cfg_.validate();
  if (weights_.layers.size() != cfg_.layers || state_.layers.size() != cfg_.layers) {
    throw DimensionError("decoder: weights/state layer count does not match config");
  }
}

template <typename T>
Tensor<T> StreamingDecoder<T>::push(const Tensor<T>& chunk) {
  check_chunk(cfg_, chunk, "decoder");
  if (state_.frame_offset > 0) {
    for (auto& layer : state_.layers) {
      if (ablation_.drop_kv) layer.attn = empty_attention_state<T>(cfg_);
      if (ablation_.drop_conv) layer.conv = zero_conv_state<T>(cfg_);
    }
  }
  Tensor<T> x =
      add(chunk, positional_encoding<T>(state_.frame_offset, chunk.rows(), cfg_.d_model));
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    x = fft_block_step(cfg_, x, weights_.layers[l], state_.layers[l]);
  }
  state_.frame_offset += chunk.rows();
  return add_bias(matmul(x, weights_.proj_w), weights_.proj_b);
}

template <typename T>
std::vector<Tensor<T>> split_chunks(const Tensor<T>& features, std::size_t chunk_size) {
  if (chunk_size == 0) throw std::invalid_argument("chunk size must be >= 1");
  std::vector<Tensor<T>> chunks;
  const std::size_t cols = features.cols();
  for (std::size_t start = 0; start < features.rows(); start += chunk_size) {
    const std::size_t n = std::min(chunk_size, features.rows() - start);
    std::vector<T> data(features.data() + start * cols, features.data() + (start + n) * cols);
    chunks.emplace_back(Shape{n, cols}, std::move(data));
  }
  return chunks;
}

template <typename T>
std::vector<Tensor<T>> decode_incremental(const DecoderConfig& cfg,
                                          const DecoderWeights<T>& weights,
                                          const Tensor<T>& features, StateAblation ablation) {
  if (features.ndim() != 2 || features.rows() == 0) {
    throw DimensionError("decode_incremental: features must be a non-empty [T x d_model] tensor");
  }
  StreamingDecoder<T> dec(cfg, weights);
  dec.set_ablation(ablation);
  std::vector<Tensor<T>> out;
  for (const auto& chunk : split_chunks(features, cfg.chunk_size)) out.push_back(dec.push(chunk));
  return out;
}

template <typename T>
Tensor<T> concat_chunks(const std::vector<Tensor<T>>& chunks) {
  Tensor<T> out;
  for (const auto& c : chunks) out = concat_time(out, c);
  return out;
}

template <typename T>
Tensor<T> decode_parallel_masked(const DecoderConfig& cfg, const DecoderWeights<T>& weights,
                                 const Tensor<T>& features, const ChunkMask& mask,
                                 std::vector<Tensor<T>>* attention_taps) {
  cfg.validate();
  if (features.ndim() != 2 || features.cols() != cfg.d_model || features.rows() == 0) {
    throw DimensionError("decode_parallel_masked: features " + shape_str(features.shape()) +
                         " do not match d_model " + std::to_string(cfg.d_model));
  }
  if (mask.total_frames != features.rows()) {
    throw DimensionError("decode_parallel_masked: mask covers " +
                         std::to_string(mask.total_frames) + " frames, features have " +
                         std::to_string(features.rows()));
  }
  EagerOps<T> ops;
  return graph::decoder_forward(ops, cfg, weights, features, features.rows(), &mask.permitted,
                                attention_taps);
}

#define CHUNKDEC_INSTANTIATE(T)                                                              \
  template DecoderWeights<T> init_weights<T>(const DecoderConfig&, std::uint64_t);           \
  template std::map<std::string, Tensor<T>> named_tensors(const DecoderWeights<T>&);         \
  template DecoderWeights<T> weights_from_named(const DecoderConfig&,                        \
                                                const std::map<std::string, Tensor<T>>&);    \
  template struct DecoderState<T>;                                                           \
  template AttentionState<T> empty_attention_state<T>(const DecoderConfig&);                 \
  template ConvState<T> zero_conv_state<T>(const DecoderConfig&);                            \
  template DecoderState<T> initial_state<T>(const DecoderConfig&);                           \
  template Tensor<T> positional_encoding<T>(std::uint64_t, std::size_t, std::size_t);        \
  template Tensor<T> mha_chunk_step(const DecoderConfig&, const Tensor<T>&,                  \
                                    const LayerWeights<T>&, AttentionState<T>&);             \
  template Tensor<T> ffn_chunk_step(const DecoderConfig&, const Tensor<T>&,                  \
                                    const LayerWeights<T>&, ConvState<T>&);                  \
  template Tensor<T> fft_block_step(const DecoderConfig&, const Tensor<T>&,                  \
                                    const LayerWeights<T>&, LayerState<T>&);                 \
  template class StreamingDecoder<T>;                                                        \
  template std::vector<Tensor<T>> split_chunks(const Tensor<T>&, std::size_t);               \
  template std::vector<Tensor<T>> decode_incremental(                                        \
      const DecoderConfig&, const DecoderWeights<T>&, const Tensor<T>&, StateAblation);      \
  template Tensor<T> concat_chunks(const std::vector<Tensor<T>>&);                           \
  template Tensor<T> decode_parallel_masked(const DecoderConfig&, const DecoderWeights<T>&,  \
                                            const Tensor<T>&, const ChunkMask&,              \
                                            std::vector<Tensor<T>>*);

CHUNKDEC_INSTANTIATE(float)
CHUNKDEC_INSTANTIATE(double)

#undef CHUNKDEC_INSTANTIATE

template DecoderWeights<float> cast_weights<float, double>(const DecoderWeights<double>&);
template DecoderWeights<double> cast_weights<double, float>(const DecoderWeights<float>&);
template DecoderWeights<double> cast_weights<double, double>(const DecoderWeights<double>&);
template DecoderWeights<float> cast_weights<float, float>(const DecoderWeights<float>&);

}  // namespace chunkdec
