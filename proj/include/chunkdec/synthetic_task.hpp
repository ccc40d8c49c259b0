#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "chunkdec/tensor.hpp"

namespace chunkdec {

// Stand-in sequence-to-sequence task for training the decoder at desk scale.
//
// Inputs: each feature dim is a sum of 4 sinusoids with task-fixed frequencies
// and amplitudes (|sum| <= 1) and per-sample random phases.
// Targets: z_t = sum_lag tap * x_{t-lag} over taps {0:1, 3:0.5, 8:0.25}
// (zero before frame 0), y_t = clamp(scale * tanh(z_t B) A, -4, 4), where
// scale standardizes y to unit variance on a calibration draw.
struct TaskConfig {
  std::uint64_t seed = 11;
  std::size_t sinusoids = 4;
  double min_freq = 0.05;  // radians per frame
  double max_freq = 0.6;
  bool operator==(const TaskConfig&) const = default;
};

struct SyntheticTask {
  TaskConfig config;
  std::size_t d_model = 0;
  std::size_t mel_bins = 0;
  Tensor<double> mix_a;  // [d_model x mel_bins]
  Tensor<double> mix_b;  // [d_model x d_model]
  Tensor<double> freqs;  // [d_model x sinusoids]
  Tensor<double> amps;   // [d_model x sinusoids]
  std::vector<std::pair<std::size_t, double>> taps{{0, 1.0}, {3, 0.5}, {8, 0.25}};
  double target_scale = 1.0;
  double target_limit = 4.0;

  static SyntheticTask make(std::size_t d_model, std::size_t mel_bins, const TaskConfig& cfg);

  std::size_t max_lag() const;
};

struct Batch {
  std::vector<Tensor<double>> features;  // [T x d_model] each
  std::vector<Tensor<double>> targets;   // [T x mel_bins] each
};

Tensor<double> task_features(const SyntheticTask& task, std::size_t frames, std::mt19937_64& rng);
Tensor<double> task_targets(const SyntheticTask& task, const Tensor<double>& features);
Batch generate_batch(const SyntheticTask& task, std::size_t frames, std::size_t batch,
                     std::mt19937_64& rng);

}  // namespace chunkdec
