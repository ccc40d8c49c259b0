#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "chunkdec/chunk_mask.hpp"
#include "chunkdec/decoder.hpp"
#include "chunkdec/synthetic_task.hpp"

namespace chunkdec {

// Adam with L2-style weight decay (decay folded into the gradient).
struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
  bool operator==(const AdamConfig&) const = default;
};

struct MaskRegime {
  enum class Kind { static_mask, dynamic_mask };
  Kind kind = Kind::static_mask;
  std::size_t chunk = 30;
  PastSize past = PastSize::frames(15);
  DynamicMaskPolicy policy;  // dynamic only

  static MaskRegime fixed(std::size_t chunk, PastSize past);
  static MaskRegime dynamic(DynamicMaskPolicy policy = {});
  std::string label() const;
};

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 8;
  double clip_norm = 1.0;  // global gradient norm
  std::size_t steps = 2000;
  std::size_t frames = 96;
  std::size_t eval_batch = 8;
  MaskRegime regime;
  std::uint64_t seed = 1;
};

class AdamState {
 public:
  std::size_t step = 0;
  std::map<std::string, Tensor<double>> m, v;
};

using ParamMap = std::map<std::string, Tensor<double>>;

struct StepReport {
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
  bool clipped = false;
  std::vector<MaskDraw> masks;  // one per sample
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Masked-parallel forward + MSE for one sample, with gradients.
struct SampleGradient {
  double loss = 0.0;
  ParamMap grads;
};
SampleGradient sample_loss_and_grad(const DecoderConfig& cfg, const ParamMap& params,
                                    const Tensor<double>& features, const Tensor<double>& target,
                                    const ChunkMask& mask);

double global_norm(const ParamMap& grads);
// Scales grads in place so that their global norm is at most max_norm.
// Returns true when scaling happened.
bool clip_by_global_norm(ParamMap& grads, double max_norm);

void adam_update(ParamMap& params, const ParamMap& grads, AdamState& st, const AdamConfig& cfg);

StepReport train_step(const DecoderConfig& cfg, ParamMap& params, const Batch& batch,
                      const MaskRegime& regime, AdamState& opt, const TrainConfig& tc,
                      std::mt19937_64& rng);

// Mean MSE of the masked-parallel forward over a batch, no gradients.
double batch_loss(const DecoderConfig& cfg, const DecoderWeights<double>& w, const Batch& batch,
                  const ChunkMask& mask_for_all);

struct TrainResult {
  DecoderWeights<double> weights;
  std::vector<StepReport> log;
  double eval_loss_before = 0.0;
  double eval_loss_after = 0.0;
};

using ProgressFn = std::function<void(std::size_t step, const StepReport&)>;

TrainResult train(const DecoderConfig& cfg, const SyntheticTask& task, const TrainConfig& tc,
                  const ProgressFn& progress = {});

}  // namespace chunkdec
