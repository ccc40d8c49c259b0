#include "chunkdec/synthetic_task.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace chunkdec {

namespace {

constexpr std::size_t kCalibrationFrames = 256;
constexpr std::size_t kCalibrationSamples = 16;

Tensor<double> uniform_matrix(std::size_t r, std::size_t c, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<double> t({r, c});
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

std::size_t SyntheticTask::max_lag() const {
  std::size_t m = 0;
  for (const auto& [lag, w] : taps) m = std::max(m, lag);
  return m;
}

SyntheticTask SyntheticTask::make(std::size_t d_model, std::size_t mel_bins,
                                  const TaskConfig& cfg) {
  if (d_model == 0 || mel_bins == 0 || cfg.sinusoids == 0) {
    throw std::invalid_argument("synthetic task needs positive dimensions");
  }
  SyntheticTask task;
  task.config = cfg;
  task.d_model = d_model;
  task.mel_bins = mel_bins;
  std::mt19937_64 rng(cfg.seed);
  task.mix_a = uniform_matrix(d_model, mel_bins, std::sqrt(3.0 / double(d_model)), rng);
  task.mix_b = uniform_matrix(d_model, d_model, std::sqrt(3.0 / double(d_model)), rng);
  std::uniform_real_distribution<double> freq(cfg.min_freq, cfg.max_freq);
  std::uniform_real_distribution<double> amp(0.1, 1.0);
  task.freqs = Tensor<double>({d_model, cfg.sinusoids});
  task.amps = Tensor<double>({d_model, cfg.sinusoids});
  for (std::size_t j = 0; j < d_model; ++j) {
    double total = 0;
    for (std::size_t m = 0; m < cfg.sinusoids; ++m) {
      task.freqs.at(j, m) = freq(rng);
      task.amps.at(j, m) = amp(rng);
      total += task.amps.at(j, m);
    }
    for (std::size_t m = 0; m < cfg.sinusoids; ++m) task.amps.at(j, m) /= total;
  }

  // Calibrate the output scale on a fixed draw, unclamped.
  task.target_limit = std::numeric_limits<double>::infinity();
  std::mt19937_64 calib(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (std::size_t s = 0; s < kCalibrationSamples; ++s) {
    auto y = task_targets(task, task_features(task, kCalibrationFrames, calib));
    for (auto v : y.values()) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  const double mean = sum / double(n);
  const double var = sq / double(n) - mean * mean;
  task.target_scale = var > 0 ? 1.0 / std::sqrt(var) : 1.0;
  task.target_limit = 4.0;
  return task;
}

Tensor<double> task_features(const SyntheticTask& task, std::size_t frames,
                             std::mt19937_64& rng) {
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const std::size_t k = task.freqs.cols();
  std::vector<double> phases(task.d_model * k);
  for (auto& p : phases) p = phase(rng);
  Tensor<double> x({frames, task.d_model});
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t j = 0; j < task.d_model; ++j) {
      double v = 0;
      for (std::size_t m = 0; m < k; ++m)
        v += task.amps.at(j, m) * std::sin(task.freqs.at(j, m) * double(t) + phases[j * k + m]);
      x.at(t, j) = v;
    }
  return x;
}

Tensor<double> task_targets(const SyntheticTask& task, const Tensor<double>& features) {
  const std::size_t frames = features.rows(), d = task.d_model;
  Tensor<double> z({frames, d});
  for (std::size_t t = 0; t < frames; ++t)
    for (const auto& [lag, w] : task.taps) {
      if (lag > t) continue;  // zero history before frame 0
      for (std::size_t j = 0; j < d; ++j) z.at(t, j) += w * features.at(t - lag, j);
    }
  Tensor<double> h = matmul(z, task.mix_b);
  for (auto& v : h.values()) v = std::tanh(v);
  Tensor<double> y = matmul(h, task.mix_a);
  for (auto& v : y.values()) v = std::clamp(v * task.target_scale, -task.target_limit, task.target_limit);
  return y;
}

Batch generate_batch(const SyntheticTask& task, std::size_t frames, std::size_t batch,
                     std::mt19937_64& rng) {
  Batch b;
  for (std::size_t i = 0; i < batch; ++i) {
    b.features.push_back(task_features(task, frames, rng));
    b.targets.push_back(task_targets(task, b.features.back()));
  }
  return b;
}

}  // namespace chunkdec
