#include "chunkdec/trainer.hpp"

#include <cmath>
#include <sstream>

#include "chunkdec/autodiff.hpp"
#include "chunkdec/decoder_graph.hpp"

namespace chunkdec {

MaskRegime MaskRegime::fixed(std::size_t chunk, PastSize past) {
  MaskRegime r;
  r.kind = Kind::static_mask;
  r.chunk = chunk;
  r.past = past;
  return r;
}

MaskRegime MaskRegime::dynamic(DynamicMaskPolicy policy) {
  policy.validate();
  MaskRegime r;
  r.kind = Kind::dynamic_mask;
  r.policy = std::move(policy);
  return r;
}

std::string MaskRegime::label() const {
  std::ostringstream os;
  if (kind == Kind::static_mask) {
    os << "static(" << chunk << "," << past.str() << ")";
  } else {
    os << "dynamic(" << policy.chunk_min << "-" << policy.chunk_max << ")";
  }
  return os.str();
}

SampleGradient sample_loss_and_grad(const DecoderConfig& cfg, const ParamMap& params,
                                    const Tensor<double>& features, const Tensor<double>& target,
                                    const ChunkMask& mask) {
  ad::Tape tape;
  auto vars = params_skeleton<ad::Var>(cfg.layers, cfg.heads);
  visit_named(vars, [&](const std::string& name, ad::Var& v) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("missing parameter '" + name + "'");
    v = tape.parameter(name, it->second);
  });
  TapeOps ops{tape};
  ad::Var x = tape.constant(features);
  ad::Var y = graph::decoder_forward(ops, cfg, vars, x, features.rows(), &mask.permitted);
  ad::Var loss = tape.mse(y, tape.constant(target));
  SampleGradient out;
  out.loss = tape.value(loss)[0];
  out.grads = tape.backward(loss, ad::Tensor(Shape{}, 1.0));
  return out;
}

double global_norm(const ParamMap& grads) {
  double sq = 0;
  for (const auto& [name, g] : grads)
    for (auto v : g.values()) sq += v * v;
  return std::sqrt(sq);
}

bool clip_by_global_norm(ParamMap& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (!(norm > max_norm)) return false;
  const double factor = max_norm / norm;
  for (auto& [name, g] : grads)
    for (auto& v : g.values()) v *= factor;
  return true;
}

void adam_update(ParamMap& params, const ParamMap& grads, AdamState& st, const AdamConfig& cfg) {
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(st.step));
  for (auto& [name, p] : params) {
    const auto& g = grads.at(name);
    auto& m = st.m.try_emplace(name, p.shape()).first->second;
    auto& v = st.v.try_emplace(name, p.shape()).first->second;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g[i] + cfg.weight_decay * p[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

namespace {

ChunkMask regime_mask(const MaskRegime& regime, std::size_t frames, std::mt19937_64& rng,
                      MaskDraw& draw) {
  if (regime.kind == MaskRegime::Kind::static_mask) {
    draw = {regime.chunk, regime.past};
  } else {
    draw = draw_mask_sizes(regime.policy, rng);
  }
  return build_static_mask(frames, draw.chunk_size, draw.past);
}

}  // namespace

StepReport train_step(const DecoderConfig& cfg, ParamMap& params, const Batch& batch,
                      const MaskRegime& regime, AdamState& opt, const TrainConfig& tc,
                      std::mt19937_64& rng) {
  if (batch.features.empty()) throw std::invalid_argument("train_step: empty batch");
  StepReport rep;
  ParamMap total;
  const double inv_n = 1.0 / double(batch.features.size());
  for (std::size_t i = 0; i < batch.features.size(); ++i) {
    MaskDraw draw{};
    // One mask per sample; static regimes draw the same mask every time.
    const ChunkMask mask = regime_mask(regime, batch.features[i].rows(), rng, draw);
    rep.masks.push_back(draw);
    auto sg = sample_loss_and_grad(cfg, params, batch.features[i], batch.targets[i], mask);
    rep.loss += sg.loss * inv_n;
    for (auto& [name, g] : sg.grads) {
      auto [it, inserted] = total.try_emplace(name, g.shape());
      auto& acc = it->second;
      for (std::size_t e = 0; e < g.numel(); ++e) acc[e] += g[e] * inv_n;
    }
  }
  if (!std::isfinite(rep.loss)) {
    throw TrainingError("non-finite loss at optimizer step " + std::to_string(opt.step + 1));
  }
  rep.grad_norm = global_norm(total);
  if (!std::isfinite(rep.grad_norm)) {
    throw TrainingError("non-finite gradient norm at optimizer step " +
                        std::to_string(opt.step + 1));
  }
  rep.clipped = clip_by_global_norm(total, tc.clip_norm);
  adam_update(params, total, opt, tc.adam);
  return rep;
}

double batch_loss(const DecoderConfig& cfg, const DecoderWeights<double>& w, const Batch& batch,
                  const ChunkMask& mask) {
  double total = 0;
  for (std::size_t i = 0; i < batch.features.size(); ++i) {
    auto y = decode_parallel_masked(cfg, w, batch.features[i], mask);
    const auto& t = batch.targets[i];
    double s = 0;
    for (std::size_t e = 0; e < y.numel(); ++e) s += (y[e] - t[e]) * (y[e] - t[e]);
    total += s / double(y.numel());
  }
  return total / double(batch.features.size());
}

TrainResult train(const DecoderConfig& cfg, const SyntheticTask& task, const TrainConfig& tc,
                  const ProgressFn& progress) {
  cfg.validate();
  if (!(tc.adam.lr >= 0) || tc.steps == 0 || tc.batch_size == 0 || tc.frames == 0) {
    throw std::invalid_argument("train: lr must be >= 0 and steps/batch/frames positive");
  }
  std::mt19937_64 rng(tc.seed);
  ParamMap params = named_tensors(init_weights<double>(cfg, rng()));
  std::mt19937_64 eval_rng(tc.seed ^ 0x5bd1e995ULL);
  const Batch eval = generate_batch(task, tc.frames, tc.eval_batch, eval_rng);
  const ChunkMask eval_mask =
      tc.regime.kind == MaskRegime::Kind::static_mask
          ? build_static_mask(tc.frames, tc.regime.chunk, tc.regime.past)
          : build_static_mask(tc.frames, cfg.chunk_size, cfg.past);

  TrainResult res;
  res.eval_loss_before = batch_loss(cfg, weights_from_named(cfg, params), eval, eval_mask);
  AdamState opt;
  for (std::size_t step = 0; step < tc.steps; ++step) {
    const Batch batch = generate_batch(task, tc.frames, tc.batch_size, rng);
    res.log.push_back(train_step(cfg, params, batch, tc.regime, opt, tc, rng));
    if (progress) progress(step, res.log.back());
  }
  res.weights = weights_from_named(cfg, params);
  res.eval_loss_after = batch_loss(cfg, res.weights, eval, eval_mask);
  return res;
}

}  // namespace chunkdec
