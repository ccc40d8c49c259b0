#include <doctest.h>

#include <cmath>
#include <sstream>

#include "chunkdec/decoder.hpp"
#include "chunkdec/decoder_graph.hpp"
#include "chunkdec/model_io.hpp"
#include "chunkdec/tensor_io.hpp"
#include "test_util.hpp"

using namespace chunkdec;
using testutil::random_tensor;

namespace {

DecoderConfig small_cfg(std::size_t chunk, std::size_t past, std::size_t layers = 2) {
  DecoderConfig c;
  c.layers = layers;
  c.heads = 2;
  c.d_model = 8;
  c.d_ff = 12;
  c.chunk_size = chunk;
  c.past = PastSize::frames(past);
  c.mel_bins = 5;
  return c;
}

// Single-head attention over all rows of `kv_src` keys, straight from the definition.
Tensor<double> reference_head(const Tensor<double>& q, const Tensor<double>& k,
                              const Tensor<double>& v, double scale_factor) {
  Tensor<double> out({q.rows(), v.cols()});
  for (std::size_t i = 0; i < q.rows(); ++i) {
    std::vector<long double> logits(k.rows());
    long double mx = -1e300L;
    for (std::size_t j = 0; j < k.rows(); ++j) {
      long double s = 0;
      for (std::size_t c = 0; c < q.cols(); ++c) s += (long double)q.at(i, c) * k.at(j, c);
      logits[j] = s * scale_factor;
      mx = std::max(mx, logits[j]);
    }
    long double z = 0;
    for (auto& l : logits) z += (l = std::exp(l - mx));
    for (std::size_t j = 0; j < k.rows(); ++j)
      for (std::size_t c = 0; c < v.cols(); ++c) out.at(i, c) += double(logits[j] / z * v.at(j, c));
  }
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  DecoderConfig c;
  CHECK_NOTHROW(c.validate());
  c.heads = 3;
  CHECK_THROWS(c.validate());
  c = DecoderConfig{};
  c.chunk_size = 0;
  CHECK_THROWS(c.validate());
  c = DecoderConfig{};
  c.kernel1 = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("init weights are Glorot-bounded and seeded") {
  DecoderConfig cfg;
  auto w = init_weights<double>(cfg, 1);
  const double lim_q = std::sqrt(6.0 / double(cfg.d_model + cfg.d_head()));
  for (auto v : w.layers[0].wq[0].values()) CHECK(std::abs(v) <= lim_q);
  const double lim_c1 = std::sqrt(6.0 / double(cfg.kernel1 * (cfg.d_model + cfg.d_ff)));
  for (auto v : w.layers[0].conv1_w.values()) CHECK(std::abs(v) <= lim_c1);
  for (auto v : w.layers[1].conv2_b.values()) CHECK(v == 0.0);
  for (auto v : w.layers[1].ln1_gamma.values()) CHECK(v == 1.0);
  CHECK(named_tensors(init_weights<double>(cfg, 1)) == named_tensors(w));
  CHECK(named_tensors(init_weights<double>(cfg, 2)) != named_tensors(w));
}

TEST_CASE("mha chunk step: single chunk without past is full self-attention") {
  auto cfg = small_cfg(6, 0, 1);
  auto w = init_weights<double>(cfg, 3);
  auto x = random_tensor<double>({6, cfg.d_model}, 4);
  auto st = empty_attention_state<double>(cfg);
  auto got = mha_chunk_step(cfg, x, w.layers[0], st);
  const auto& L = w.layers[0];
  std::vector<Tensor<double>> heads;
  for (std::size_t h = 0; h < cfg.heads; ++h)
    heads.push_back(reference_head(matmul(x, L.wq[h]), matmul(x, L.wk[h]), matmul(x, L.wv[h]),
                                   1.0 / std::sqrt(double(cfg.d_head()))));
  auto want = matmul(concat_cols(std::span<const Tensor<double>>(heads)), L.wo);
  CHECK(max_abs_diff(got, want) <= 1e-12);
  CHECK(st.length() == 0);
}

TEST_CASE("mha cache keeps exactly the last S_p keys") {
  auto cfg = small_cfg(4, 5, 1);
  auto w = init_weights<double>(cfg, 5);
  auto x = random_tensor<double>({12, cfg.d_model}, 6);
  auto st = empty_attention_state<double>(cfg);
  for (const auto& c : split_chunks(x, 4)) {
    mha_chunk_step(cfg, c, w.layers[0], st);
    CHECK(st.length() <= 5);
  }
  CHECK(st.length() == 5);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    auto all_k = matmul(x, w.layers[0].wk[h]);
    auto all_v = matmul(x, w.layers[0].wv[h]);
    CHECK(st.pk[h] == tail_slice(all_k, 5));
    CHECK(st.pv[h] == tail_slice(all_v, 5));
  }
}

TEST_CASE("ffn chunk step") {
  SUBCASE("kernel 1 is stateless") {
    auto cfg = small_cfg(3, 0, 1);
    cfg.kernel1 = cfg.kernel2 = 1;
    auto w = init_weights<double>(cfg, 7);
    auto st = zero_conv_state<double>(cfg);
    auto x = random_tensor<double>({3, cfg.d_model}, 8);
    auto y = ffn_chunk_step(cfg, x, w.layers[0], st);
    CHECK(st.pc1.rows() == 0);
    CHECK(st.pc2.rows() == 0);
    CHECK(y.rows() == 3);
  }
  SUBCASE("chunked equals one-shot zero-padded convolution") {
    auto cfg = small_cfg(3, 0, 1);
    cfg.kernel1 = 3;
    cfg.kernel2 = 2;
    auto w = init_weights<double>(cfg, 9);
    w.layers[0].conv1_b = random_tensor<double>({cfg.d_ff}, 10, 0.2);
    auto x = random_tensor<double>({12, cfg.d_model}, 11);

    EagerOps<double> ops;
    auto oneshot = graph::feed_forward(ops, cfg, x, w.layers[0]);

    // Sliding-window oracle with explicit zero history.
    Tensor<double> c1 = concat_time(Tensor<double>({cfg.kernel1 - 1, cfg.d_model}), x);
    Tensor<double> h({12, cfg.d_ff});
    for (std::size_t t = 0; t < 12; ++t)
      for (std::size_t o = 0; o < cfg.d_ff; ++o) {
        double acc = w.layers[0].conv1_b[o];
        for (std::size_t j = 0; j < cfg.kernel1; ++j)
          for (std::size_t i = 0; i < cfg.d_model; ++i)
            acc += c1.at(t + j, i) * w.layers[0].conv1_w[(j * cfg.d_model + i) * cfg.d_ff + o];
        h.at(t, o) = std::max(0.0, acc);
      }
    Tensor<double> c2 = concat_time(Tensor<double>({cfg.kernel2 - 1, cfg.d_ff}), h);
    for (std::size_t t = 0; t < 12; ++t)
      for (std::size_t o = 0; o < cfg.d_model; ++o) {
        double acc = w.layers[0].conv2_b[o];
        for (std::size_t j = 0; j < cfg.kernel2; ++j)
          for (std::size_t i = 0; i < cfg.d_ff; ++i)
            acc += c2.at(t + j, i) * w.layers[0].conv2_w[(j * cfg.d_ff + i) * cfg.d_model + o];
        CHECK(oneshot.at(t, o) == std::max(0.0, acc));
      }

    auto st = zero_conv_state<double>(cfg);
    std::vector<Tensor<double>> outs;
    for (const auto& c : split_chunks(x, 3)) {
      outs.push_back(ffn_chunk_step(cfg, c, w.layers[0], st));
      CHECK(st.pc1.rows() == cfg.kernel1 - 1);
      CHECK(st.pc2.rows() == cfg.kernel2 - 1);
    }
    CHECK(concat_chunks(outs) == oneshot);
  }
}

TEST_CASE("fft block with zero weights reduces to the two layer norms") {
  auto cfg = small_cfg(4, 2, 1);
  auto w = init_weights<double>(cfg, 12);
  auto& L = w.layers[0];
  for (auto* t : {&L.wo, &L.conv1_w, &L.conv2_w}) *t = Tensor<double>(t->shape());
  for (auto& t : L.wq) t = Tensor<double>(t.shape());
  for (auto& t : L.wk) t = Tensor<double>(t.shape());
  for (auto& t : L.wv) t = Tensor<double>(t.shape());
  auto x = random_tensor<double>({4, cfg.d_model}, 13);
  LayerState<double> st{empty_attention_state<double>(cfg), zero_conv_state<double>(cfg)};
  auto y = fft_block_step(cfg, x, L, st);
  auto ln = [&](const Tensor<double>& v) { return layer_norm(v, L.ln1_gamma, L.ln1_beta, cfg.eps_ln); };
  CHECK(max_abs_diff(y, ln(ln(x))) <= 1e-12);
}

TEST_CASE("positional encoding") {
  auto p0 = positional_encoding<double>(0, 1, 6);
  CHECK(p0 == Tensor<double>::matrix(1, 6, {0, 1, 0, 1, 0, 1}));
  auto full = positional_encoding<double>(0, 20, 8);
  auto one = positional_encoding<double>(13, 1, 8);
  for (std::size_t j = 0; j < 8; ++j) CHECK(one.at(0, j) == full.at(13, j));
  auto a = positional_encoding<double>(0, 7, 8), b = positional_encoding<double>(7, 13, 8);
  CHECK(concat_time(a, b) == full);
  // even columns sin(pos * 10000^(-i/d)), odd columns cos of the same angle
  const double ang = 5.0 * std::pow(10000.0, -2.0 / 8.0);
  CHECK(full.at(5, 2) == doctest::Approx(std::sin(ang)).epsilon(1e-15));
  CHECK(full.at(5, 3) == doctest::Approx(std::cos(ang)).epsilon(1e-15));
}

TEST_CASE_TEMPLATE("incremental decoding equals masked parallel decoding", T, float, double) {
  const double tol = std::is_same_v<T, double> ? 1e-9 : 1e-4;
  for (std::size_t chunk : {1, 3, 5})
    for (std::size_t past : {std::size_t(0), chunk / 2 + 1, chunk, 2 * chunk + 1})
      for (std::size_t T_ : {1, 7, 16}) {
        auto cfg = small_cfg(chunk, past);
        cfg.dtype = dtype_of<T>();
        auto w = init_weights<T>(cfg, chunk * 100 + past);
        auto x = random_tensor<T>({T_, cfg.d_model}, T_ + 7);
        auto inc = concat_chunks(decode_incremental(cfg, w, x));
        auto par = decode_parallel_masked(cfg, w, x, build_static_mask(T_, chunk, cfg.past));
        INFO("chunk " << chunk << " past " << past << " T " << T_);
        CHECK(double(max_abs_diff(inc, par)) <= tol);
      }
}

TEST_CASE("past of ALL matches a large finite past") {
  auto cfg = small_cfg(3, 0);
  cfg.past = PastSize::all();
  auto w = init_weights<double>(cfg, 14);
  auto x = random_tensor<double>({11, cfg.d_model}, 15);
  auto inc = concat_chunks(decode_incremental(cfg, w, x));
  CHECK(max_abs_diff(inc, decode_parallel_masked(cfg, w, x, build_static_mask(11, 3, PastSize::all()))) <= 1e-9);
  auto big = cfg;
  big.past = PastSize::frames(100);
  CHECK(inc == concat_chunks(decode_incremental(big, w, x)));
}

TEST_CASE("one chunk covering everything equals the all-true parallel forward") {
  auto cfg = small_cfg(9, 4);
  auto w = init_weights<double>(cfg, 16);
  auto x = random_tensor<double>({9, cfg.d_model}, 17);
  auto chunks = decode_incremental(cfg, w, x);
  REQUIRE(chunks.size() == 1);
  CHECK(chunks[0] == decode_parallel_masked(cfg, w, x, build_static_mask(9, 9, PastSize::all())));
}

TEST_CASE("cache sizes stay bounded") {
  auto cfg = small_cfg(2, 3);
  auto w = init_weights<double>(cfg, 18);
  StreamingDecoder<double> dec(cfg, w);
  for (int c = 0; c < 60; ++c) {
    dec.push(random_tensor<double>({2, cfg.d_model}, 100 + c));
    for (const auto& L : dec.state().layers) {
      CHECK(L.attn.length() <= 3);
      for (std::size_t h = 0; h < cfg.heads; ++h) CHECK(L.attn.pv[h].rows() == L.attn.pk[h].rows());
      CHECK(L.conv.pc1.rows() == cfg.kernel1 - 1);
      CHECK(L.conv.pc2.rows() == cfg.kernel2 - 1);
    }
  }
  CHECK(dec.state().frame_offset == 120);
}

TEST_CASE("future chunks never change earlier outputs") {
  auto cfg = small_cfg(3, 4);
  auto w = init_weights<double>(cfg, 19);
  auto x = random_tensor<double>({15, cfg.d_model}, 20);
  auto base = decode_incremental(cfg, w, x);
  for (std::size_t j = 0; j + 1 < base.size(); ++j) {
    auto x2 = x;
    for (std::size_t t = (j + 1) * 3; t < (j + 2) * 3; ++t)
      for (std::size_t c = 0; c < cfg.d_model; ++c) x2.at(t, c) += 3.0;
    auto out = decode_incremental(cfg, w, x2);
    for (std::size_t i = 0; i <= j; ++i) CHECK(out[i] == base[i]);
    CHECK(out[j + 1] != base[j + 1]);
  }
}

TEST_CASE("block-diagonal mask isolates attention per chunk") {
  auto cfg = small_cfg(4, 0, 1);
  auto w = init_weights<double>(cfg, 21);
  auto x = random_tensor<double>({12, cfg.d_model}, 22);
  auto mask = build_static_mask(12, 4, PastSize::frames(0));
  std::vector<Tensor<double>> taps, taps2;
  decode_parallel_masked(cfg, w, x, mask, &taps);
  auto x2 = x;
  for (std::size_t t = 0; t < 12; ++t)
    if (t / 4 != 1)
      for (std::size_t c = 0; c < cfg.d_model; ++c) x2.at(t, c) = -x.at(11 - t, c);
  decode_parallel_masked(cfg, w, x2, mask, &taps2);
  for (std::size_t t = 4; t < 8; ++t)
    for (std::size_t c = 0; c < cfg.d_model; ++c) CHECK(taps[0].at(t, c) == taps2[0].at(t, c));
}

TEST_CASE("dropping caches breaks equivalence") {
  auto cfg = small_cfg(4, 4);
  auto w = init_weights<double>(cfg, 23);
  auto x = random_tensor<double>({16, cfg.d_model}, 24);
  auto intact = concat_chunks(decode_incremental(cfg, w, x));
  auto no_kv = concat_chunks(decode_incremental(cfg, w, x, {true, false}));
  auto no_conv = concat_chunks(decode_incremental(cfg, w, x, {false, true}));
  CHECK(max_abs_diff(intact, no_kv) > 1e-3);
  CHECK(max_abs_diff(intact, no_conv) > 1e-3);
  // The first chunk is unaffected.
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < cfg.mel_bins; ++c) CHECK(no_kv.at(t, c) == intact.at(t, c));
}

TEST_CASE("state snapshot resumes bit-identically") {
  auto cfg = small_cfg(3, 5);
  auto w = init_weights<double>(cfg, 25);
  auto x = random_tensor<double>({21, cfg.d_model}, 26);
  auto chunks = split_chunks(x, 3);
  auto whole = decode_incremental(cfg, w, x);
  for (std::size_t cut = 1; cut < chunks.size(); ++cut) {
    StreamingDecoder<double> a(cfg, w);
    for (std::size_t i = 0; i < cut; ++i) a.push(chunks[i]);
    std::stringstream ss;
    write_state(ss, a.state());
    auto restored = read_state<double>(ss, cfg);
    CHECK(restored == a.state());
    StreamingDecoder<double> b(cfg, w, restored);
    for (std::size_t i = cut; i < chunks.size(); ++i) CHECK(b.push(chunks[i]) == whole[i]);
  }
}

TEST_CASE("state file rejects a mismatched config") {
  auto cfg = small_cfg(3, 5);
  auto w = init_weights<double>(cfg, 27);
  StreamingDecoder<double> a(cfg, w);
  a.push(random_tensor<double>({3, cfg.d_model}, 28));
  std::stringstream ss;
  write_state(ss, a.state());
  auto other = cfg;
  other.layers = 3;
  CHECK_THROWS(read_state<double>(ss, other));
  std::stringstream bad("NOPE");
  CHECK_THROWS_AS(read_state<double>(bad, cfg), FormatError);
}

TEST_CASE("weights file round trip") {
  auto cfg = small_cfg(3, 5);
  auto w = init_weights<double>(cfg, 29);
  std::stringstream ss;
  write_weights(ss, cfg, w);
  auto m = read_weights(ss);
  CHECK(m.config == cfg);
  CHECK(named_tensors(m.weights) == named_tensors(w));

  cfg.dtype = DType::f32;
  std::stringstream s32;
  write_weights(s32, cfg, w);
  auto m32 = read_weights(s32);
  CHECK(m32.config.dtype == DType::f32);
  CHECK(named_tensors(m32.weights) == named_tensors(cast_weights<double>(cast_weights<float>(w))));

  std::stringstream bad("CFPWgarbage");
  CHECK_THROWS_AS(read_weights(bad), FormatError);
}

TEST_CASE("named tensors reject missing and extra entries") {
  auto cfg = small_cfg(3, 5);
  auto named = named_tensors(init_weights<double>(cfg, 30));
  auto missing = named;
  missing.erase("proj.bias");
  CHECK_THROWS(weights_from_named(cfg, missing));
  auto extra = named;
  extra.emplace("bogus", Tensor<double>({1, 1}));
  CHECK_THROWS(weights_from_named(cfg, extra));
  auto wrong = named;
  wrong.at("proj.bias") = Tensor<double>({3});
  CHECK_THROWS(weights_from_named(cfg, wrong));
}

TEST_CASE("chunk width mismatch is rejected") {
  auto cfg = small_cfg(3, 5);
  auto w = init_weights<double>(cfg, 31);
  StreamingDecoder<double> dec(cfg, w);
  CHECK_THROWS_AS(dec.push(Tensor<double>({3, cfg.d_model + 1})), DimensionError);
}
