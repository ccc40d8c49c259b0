#include <doctest.h>

#include <cmath>

#include "chunkdec/trainer.hpp"
#include "test_util.hpp"

using namespace chunkdec;

namespace {

DecoderConfig tiny_cfg() {
  DecoderConfig c;
  c.layers = 1;
  c.heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.mel_bins = 4;
  c.chunk_size = 4;
  c.past = PastSize::frames(4);
  return c;
}

double loss_at(const DecoderConfig& cfg, const ParamMap& p, const Batch& b, const ChunkMask& m) {
  return sample_loss_and_grad(cfg, p, b.features[0], b.targets[0], m).loss;
}

}  // namespace

TEST_CASE("synthetic targets match an independent recomputation") {
  auto task = SyntheticTask::make(6, 3, TaskConfig{});
  std::mt19937_64 rng(3);
  auto x = task_features(task, 40, rng);
  REQUIRE(x.shape() == Shape{40, 6});
  for (auto v : x.values()) CHECK(std::abs(v) <= 1.0 + 1e-12);
  auto y = task_targets(task, x);
  REQUIRE(y.shape() == Shape{40, 3});
  for (std::size_t t = 0; t < 40; ++t) {
    std::vector<double> z(6, 0.0);
    for (auto [lag, tap] : task.taps)
      if (t >= lag)
        for (std::size_t i = 0; i < 6; ++i) z[i] += tap * x.at(t - lag, i);
    std::vector<double> h(6, 0.0);
    for (std::size_t j = 0; j < 6; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < 6; ++i) s += z[i] * task.mix_b.at(i, j);
      h[j] = std::tanh(s);
    }
    for (std::size_t m = 0; m < 3; ++m) {
      double s = 0;
      for (std::size_t j = 0; j < 6; ++j) s += h[j] * task.mix_a.at(j, m);
      const double want = std::clamp(task.target_scale * s, -4.0, 4.0);
      CHECK(y.at(t, m) == doctest::Approx(want).epsilon(1e-12));
    }
  }
  // Frame 0 sees only its own input.
  auto x0 = x;
  for (std::size_t t = 1; t < 40; ++t)
    for (std::size_t i = 0; i < 6; ++i) x0.at(t, i) = 0.0;
  auto y0 = task_targets(task, x0);
  for (std::size_t m = 0; m < 3; ++m) CHECK(y0.at(0, m) == y.at(0, m));
}

TEST_CASE("targets are roughly unit variance") {
  auto task = SyntheticTask::make(16, 8, TaskConfig{});
  std::mt19937_64 rng(4);
  auto b = generate_batch(task, 200, 4, rng);
  double s = 0, n = 0;
  for (const auto& t : b.targets)
    for (auto v : t.values()) s += v * v, n += 1;
  CHECK(s / n == doctest::Approx(1.0).epsilon(0.5));
}

TEST_CASE("gradient clipping") {
  ParamMap g{{"a", Tensor<double>::vector({3, 0})}, {"b", Tensor<double>::vector({4})}};
  CHECK(global_norm(g) == 5.0);
  CHECK_FALSE(clip_by_global_norm(g, 5.0));
  CHECK(clip_by_global_norm(g, 1.0));
  CHECK(global_norm(g) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(g.at("a")[0] == doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("adam first step moves each parameter by about lr") {
  ParamMap p{{"w", Tensor<double>::vector({1.0, -2.0, 0.5})}};
  ParamMap g{{"w", Tensor<double>::vector({0.3, -7.0, 0.0})}};
  AdamState st;
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.lr = 0.01;
  adam_update(p, g, st, cfg);
  CHECK(p.at("w")[0] == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(p.at("w")[1] == doctest::Approx(-1.99).epsilon(1e-6));
  CHECK(p.at("w")[2] == 0.5);
  CHECK(st.step == 1);
}

TEST_CASE("sample gradient matches central differences") {
  auto cfg = tiny_cfg();
  auto task = SyntheticTask::make(cfg.d_model, cfg.mel_bins, TaskConfig{});
  std::mt19937_64 rng(5);
  auto b = generate_batch(task, 10, 1, rng);
  auto mask = build_static_mask(10, cfg.chunk_size, cfg.past);
  ParamMap p = named_tensors(init_weights<double>(cfg, 6));
  auto sg = sample_loss_and_grad(cfg, p, b.features[0], b.targets[0], mask);
  const double h = 1e-6;
  for (const char* name : {"proj.weight", "layers.0.attn.wq.0", "layers.0.conv1.weight", "layers.0.ln2.gamma"}) {
    REQUIRE(p.count(name));
    for (std::size_t idx : {std::size_t(0), p.at(name).numel() / 2}) {
      auto plus = p, minus = p;
      plus.at(name)[idx] += h;
      minus.at(name)[idx] -= h;
      const double num = (loss_at(cfg, plus, b, mask) - loss_at(cfg, minus, b, mask)) / (2 * h);
      const double ana = sg.grads.at(name)[idx];
      INFO(name << "[" << idx << "]");
      CHECK(std::abs(num - ana) <= 1e-5 * std::max(1.0, std::abs(num)));
    }
  }
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  auto cfg = tiny_cfg();
  auto task = SyntheticTask::make(cfg.d_model, cfg.mel_bins, TaskConfig{});
  TrainConfig tc;
  tc.adam.lr = 0.0;
  tc.steps = 2;
  tc.batch_size = 2;
  tc.frames = 12;
  tc.eval_batch = 2;
  tc.regime = MaskRegime::fixed(4, PastSize::frames(4));
  tc.seed = 7;
  auto r = train(cfg, task, tc);
  std::mt19937_64 rng(tc.seed);
  auto init = init_weights<double>(cfg, rng());
  CHECK(named_tensors(r.weights) == named_tensors(init));
  CHECK(r.eval_loss_after == r.eval_loss_before);
}

TEST_CASE("a single step usually lowers the loss on its own sample") {
  auto cfg = tiny_cfg();
  auto task = SyntheticTask::make(cfg.d_model, cfg.mel_bins, TaskConfig{});
  TrainConfig tc;
  tc.adam.lr = 1e-3;
  int decreased = 0;
  const int trials = 20;
  for (int s = 0; s < trials; ++s) {
    std::mt19937_64 rng(100 + s);
    auto b = generate_batch(task, 12, 1, rng);
    auto mask = build_static_mask(12, cfg.chunk_size, cfg.past);
    ParamMap p = named_tensors(init_weights<double>(cfg, 200 + s));
    const double before = loss_at(cfg, p, b, mask);
    AdamState st;
    train_step(cfg, p, b, MaskRegime::fixed(cfg.chunk_size, cfg.past), st, tc, rng);
    if (loss_at(cfg, p, b, mask) < before) ++decreased;
  }
  CHECK(decreased >= 19);
}

TEST_CASE("training is deterministic and reduces eval loss") {
  auto cfg = tiny_cfg();
  auto task = SyntheticTask::make(cfg.d_model, cfg.mel_bins, TaskConfig{});
  TrainConfig tc;
  tc.adam.lr = 3e-3;
  tc.steps = 30;
  tc.batch_size = 2;
  tc.frames = 16;
  tc.eval_batch = 2;
  tc.regime = MaskRegime::dynamic();
  tc.regime.policy = DynamicMaskPolicy{2, 6, {0.0, 1.0, std::nullopt}};
  auto a = train(cfg, task, tc);
  auto b = train(cfg, task, tc);
  CHECK(named_tensors(a.weights) == named_tensors(b.weights));
  REQUIRE(a.log.size() == 30);
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);
  CHECK(a.log[0].masks.size() == 2);
  CHECK(a.eval_loss_after < a.eval_loss_before);
}

TEST_CASE("dynamic regime draws a mask per sample") {
  auto cfg = tiny_cfg();
  auto task = SyntheticTask::make(cfg.d_model, cfg.mel_bins, TaskConfig{});
  std::mt19937_64 rng(8);
  auto b = generate_batch(task, 12, 8, rng);
  ParamMap p = named_tensors(init_weights<double>(cfg, 9));
  AdamState st;
  TrainConfig tc;
  auto rep = train_step(cfg, p, b, MaskRegime::dynamic(DynamicMaskPolicy{1, 12, {0.0, 1.0}}), st,
                        tc, rng);
  REQUIRE(rep.masks.size() == 8);
  bool differs = false;
  for (const auto& m : rep.masks) differs = differs || m.chunk_size != rep.masks[0].chunk_size;
  CHECK(differs);
}

TEST_CASE("full-context static mask equals the unmasked loss") {
  auto cfg = tiny_cfg();
  auto task = SyntheticTask::make(cfg.d_model, cfg.mel_bins, TaskConfig{});
  std::mt19937_64 rng(10);
  auto b = generate_batch(task, 12, 1, rng);
  ParamMap p = named_tensors(init_weights<double>(cfg, 11));
  auto full = build_static_mask(12, 12, PastSize::all());
  auto also_full = build_static_mask(12, 3, PastSize::all());
  // With S_c = T every key is visible; (3, ALL) is causal-by-chunk instead.
  for (std::size_t q = 0; q < 12; ++q)
    for (std::size_t k = 0; k < 12; ++k) REQUIRE(full.permitted(q, k));
  auto w = weights_from_named(cfg, p);
  auto y = decode_parallel_masked(cfg, w, b.features[0], full);
  double mse = 0;
  for (std::size_t e = 0; e < y.numel(); ++e)
    mse += (y[e] - b.targets[0][e]) * (y[e] - b.targets[0][e]);
  mse /= double(y.numel());
  CHECK(loss_at(cfg, p, b, full) == doctest::Approx(mse).epsilon(1e-14));
  CHECK(loss_at(cfg, p, b, also_full) != loss_at(cfg, p, b, full));
}

TEST_CASE("non-finite loss is reported") {
  auto cfg = tiny_cfg();
  auto task = SyntheticTask::make(cfg.d_model, cfg.mel_bins, TaskConfig{});
  std::mt19937_64 rng(12);
  auto b = generate_batch(task, 8, 1, rng);
  b.targets[0][0] = std::numeric_limits<double>::quiet_NaN();
  ParamMap p = named_tensors(init_weights<double>(cfg, 13));
  AdamState st;
  TrainConfig tc;
  CHECK_THROWS_AS(train_step(cfg, p, b, MaskRegime::fixed(4, PastSize::frames(4)), st, tc, rng),
                  TrainingError);
}
