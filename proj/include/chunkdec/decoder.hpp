#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "chunkdec/chunk_mask.hpp"
#include "chunkdec/tensor.hpp"

namespace chunkdec {

struct DecoderConfig {
  std::size_t layers = 2;  // N_d
  std::size_t heads = 2;
  std::size_t d_model = 32;
  std::size_t kernel1 = 3;
  std::size_t kernel2 = 3;
  std::size_t d_ff = 64;
  std::size_t chunk_size = 30;                 // S_c
  PastSize past = PastSize::frames(15);        // S_p
  std::size_t mel_bins = 80;
  double eps_ln = 1e-5;
  DType dtype = DType::f64;

  std::size_t d_head() const { return d_model / heads; }
  void validate() const;
  bool operator==(const DecoderConfig&) const = default;
};

// Per-layer parameters. V is a tensor for inference and a tape handle while
// recording gradients.
template <class V>
struct LayerParams {
  std::vector<V> wq, wk, wv;  // per head, [d_model x d_head]
  V wo;                       // [d_model x d_model]
  V conv1_w, conv1_b;         // [k1 x d_model x d_ff], [d_ff]
  V conv2_w, conv2_b;         // [k2 x d_ff x d_model], [d_model]
  V ln1_gamma, ln1_beta;
  V ln2_gamma, ln2_beta;
};

template <class V>
struct DecoderParams {
  std::vector<LayerParams<V>> layers;
  V proj_w;  // [d_model x mel_bins]
  V proj_b;  // [mel_bins]
};

// Calls f(name, param) for every parameter in a fixed order; the names are
// the ones used by the weights file and the optimizer.
template <class P, class F>
void visit_named(P& p, F&& f) {
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string prefix = "layers." + std::to_string(l) + ".";
    for (std::size_t h = 0; h < L.wq.size(); ++h) {
      const std::string hs = std::to_string(h);
      f(prefix + "attn.wq." + hs, L.wq[h]);
      f(prefix + "attn.wk." + hs, L.wk[h]);
      f(prefix + "attn.wv." + hs, L.wv[h]);
    }
    f(prefix + "attn.wo", L.wo);
    f(prefix + "conv1.weight", L.conv1_w);
    f(prefix + "conv1.bias", L.conv1_b);
    f(prefix + "conv2.weight", L.conv2_w);
    f(prefix + "conv2.bias", L.conv2_b);
    f(prefix + "ln1.gamma", L.ln1_gamma);
    f(prefix + "ln1.beta", L.ln1_beta);
    f(prefix + "ln2.gamma", L.ln2_gamma);
    f(prefix + "ln2.beta", L.ln2_beta);
  }
  f(std::string("proj.weight"), p.proj_w);
  f(std::string("proj.bias"), p.proj_b);
}

// Empty parameter structure with the layer/head layout of cfg.
template <class V>
DecoderParams<V> params_skeleton(std::size_t layers, std::size_t heads) {
  DecoderParams<V> p;
  p.layers.resize(layers);
  for (auto& L : p.layers) {
    L.wq.resize(heads);
    L.wk.resize(heads);
    L.wv.resize(heads);
  }
  return p;
}

template <typename T>
using LayerWeights = LayerParams<Tensor<T>>;
template <typename T>
using DecoderWeights = DecoderParams<Tensor<T>>;

// Glorot-uniform matrices, zero biases, unit LayerNorm gains.
template <typename T>
DecoderWeights<T> init_weights(const DecoderConfig& cfg, std::uint64_t seed);

// Flat name -> tensor view used by the optimizer and the weights file.
template <typename T>
std::map<std::string, Tensor<T>> named_tensors(const DecoderWeights<T>& w);
template <typename T>
DecoderWeights<T> weights_from_named(const DecoderConfig& cfg,
                                     const std::map<std::string, Tensor<T>>& named);

template <typename To, typename From>
DecoderWeights<To> cast_weights(const DecoderWeights<From>& w);

// ---- incremental state ---------------------------------------------------

template <typename T>
struct AttentionState {
  std::vector<Tensor<T>> pk, pv;  // per head, [t_past x d_head]
  std::size_t length() const { return pk.empty() ? 0 : pk.front().rows(); }
};

template <typename T>
struct ConvState {
  Tensor<T> pc1;  // [k1-1 x d_model]
  Tensor<T> pc2;  // [k2-1 x d_ff]
};

template <typename T>
struct LayerState {
  AttentionState<T> attn;
  ConvState<T> conv;
};

template <typename T>
struct DecoderState {
  std::vector<LayerState<T>> layers;
  std::uint64_t frame_offset = 0;

  bool operator==(const DecoderState& other) const;
};

// Empty attention caches, zero conv states.
template <typename T>
DecoderState<T> initial_state(const DecoderConfig& cfg);
template <typename T>
AttentionState<T> empty_attention_state(const DecoderConfig& cfg);
template <typename T>
ConvState<T> zero_conv_state(const DecoderConfig& cfg);

// ---- chunk operations ----------------------------------------------------

template <typename T>
Tensor<T> mha_chunk_step(const DecoderConfig& cfg, const Tensor<T>& x,
                         const LayerWeights<T>& w, AttentionState<T>& st);

template <typename T>
Tensor<T> ffn_chunk_step(const DecoderConfig& cfg, const Tensor<T>& x,
                         const LayerWeights<T>& w, ConvState<T>& st);

template <typename T>
Tensor<T> fft_block_step(const DecoderConfig& cfg, const Tensor<T>& x,
                         const LayerWeights<T>& w, LayerState<T>& st);

// Sinusoidal encoding for absolute frames offset .. offset+length-1.
template <typename T>
Tensor<T> positional_encoding(std::uint64_t offset, std::size_t length, std::size_t d_model);

struct StateAblation {
  bool drop_kv = false;    // clear attention caches before every chunk
  bool drop_conv = false;  // zero conv states before every chunk
};

// Chunk-at-a-time decoder holding one stream's state.
template <typename T>
class StreamingDecoder {
 public:
  StreamingDecoder(const DecoderConfig& cfg, const DecoderWeights<T>& weights);
  StreamingDecoder(const DecoderConfig& cfg, const DecoderWeights<T>& weights,
                   DecoderState<T> state);

  // Consumes one feature chunk [n x d_model], returns its Mel chunk [n x mel_bins].
  Tensor<T> push(const Tensor<T>& chunk);

  const DecoderState<T>& state() const { return state_; }
  void set_ablation(StateAblation a) { ablation_ = a; }
  void reset() { state_ = initial_state<T>(cfg_); }

 private:
  DecoderConfig cfg_;
  const DecoderWeights<T>& weights_;
  DecoderState<T> state_;
  StateAblation ablation_;
};

// Splits features into chunks of cfg.chunk_size (last may be shorter).
template <typename T>
std::vector<Tensor<T>> split_chunks(const Tensor<T>& features, std::size_t chunk_size);

template <typename T>
std::vector<Tensor<T>> decode_incremental(const DecoderConfig& cfg,
                                          const DecoderWeights<T>& weights,
                                          const Tensor<T>& features,
                                          StateAblation ablation = {});

template <typename T>
Tensor<T> concat_chunks(const std::vector<Tensor<T>>& chunks);

// Full-sequence forward with every attention restricted by `mask`; causal
// convolutions use k-1 frames of left zero padding. When attention_taps is
// given, it receives each layer's attention sublayer output.
template <typename T>
Tensor<T> decode_parallel_masked(const DecoderConfig& cfg, const DecoderWeights<T>& weights,
                                 const Tensor<T>& features, const ChunkMask& mask,
                                 std::vector<Tensor<T>>* attention_taps = nullptr);

}  // namespace chunkdec
