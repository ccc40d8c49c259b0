#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "chunkdec/decoder.hpp"

namespace chunkdec {

// Audio-duration constants for RTF: hop 256 samples at 22.05 kHz.
inline constexpr double kHopLength = 256.0;
inline constexpr double kSampleRate = 22050.0;

inline double audio_duration_seconds(std::size_t frames) {
  return double(frames) * kHopLength / kSampleRate;
}

enum class MsdMetric { frame_l2, mean_squared };

// Default: mean over frames of the Euclidean norm of the per-frame difference.
template <typename T>
double msd(const Tensor<T>& a, const Tensor<T>& b, MsdMetric metric = MsdMetric::frame_l2);

// ---- equivalence sweep ---------------------------------------------------

struct SweepGrid {
  std::vector<std::size_t> layers{1, 2, 3};
  std::vector<std::size_t> heads{1, 2, 4};
  std::vector<std::size_t> d_model{8, 16, 32};
  std::vector<std::size_t> chunk{1, 4, 7, 30};
  std::size_t kernel1 = 3;
  std::size_t kernel2 = 3;
  std::size_t mel_bins = 80;
  // Past sizes and frame counts are derived from each chunk size:
  // past in {0, ceil(S_c/2), S_c, 2 S_c + 1}, T in {1, S_c, 3 S_c + 2, 50}.
};

struct SweepCell {
  DecoderConfig cfg;
  std::size_t frames = 0;
  std::uint64_t seed = 0;
  double max_abs_diff = 0.0;
  std::size_t argmax_frame = 0;
  std::size_t argmax_bin = 0;
};

struct SweepReport {
  DType dtype = DType::f64;
  double tolerance = 0.0;
  std::vector<SweepCell> cells;
  double max_abs_diff = 0.0;
  std::vector<std::size_t> failures;  // indices into cells
  double seconds = 0.0;

  bool passed() const { return failures.empty(); }
};

double default_equivalence_tolerance(DType dtype);

// Incremental decode vs masked-parallel decode over every grid cell and seed.
SweepReport equivalence_sweep(const SweepGrid& grid, std::size_t seeds, DType dtype,
                              double tolerance, std::uint64_t base_seed = 1);

nlohmann::json to_json(const SweepCell& cell);
nlohmann::json to_json(const SweepReport& rep, bool include_cells = false);

// ---- ablation --------------------------------------------------------------

enum class AblationMode { drop_kv, drop_conv, drop_both };
const char* ablation_name(AblationMode m);
AblationMode parse_ablation(const std::string& s);
StateAblation ablation_flags(AblationMode m);

struct AblationConfig {
  std::size_t frames = 150;
  std::size_t seeds = 20;
  double diff_threshold = 1e-3;
  double pass_fraction = 0.95;
};

// Mean |Mel[t] - Mel[t-1]| (frame L2 of the difference, averaged over bins)
// at chunk-start frames and at interior frames.
struct BoundaryStat {
  double boundary = 0.0;
  double interior = 0.0;
};

template <typename T>
BoundaryStat boundary_jumps(const Tensor<T>& mel, std::size_t chunk_size);

struct AblationSeed {
  std::uint64_t seed = 0;
  double max_abs_diff = 0.0;
  BoundaryStat intact;
  BoundaryStat ablated;
};

struct AblationReport {
  AblationMode mode = AblationMode::drop_kv;
  DecoderConfig cfg;
  std::vector<AblationSeed> seeds;
  double diff_threshold = 0.0;
  double fraction_over_threshold = 0.0;
  double fraction_boundary_increase = 0.0;
  double mean_intact_boundary = 0.0;
  double mean_ablated_boundary = 0.0;
};

// Smooth random-weight decode with the selected caches dropped between chunks,
// compared against the intact incremental run.
AblationReport ablation_check(const DecoderConfig& cfg, AblationMode mode,
                              const AblationConfig& ac, std::uint64_t base_seed = 1);
nlohmann::json to_json(const AblationReport& rep);

// ---- latency ---------------------------------------------------------------

struct BenchConfig {
  std::size_t frames = 600;
  std::size_t repeats = 5;
  std::size_t warmup = 3;
};

struct BenchResult {
  std::size_t total_frames = 0;
  std::size_t chunk_size = 0;
  std::size_t repeats = 0;
  double audio_duration = 0.0;          // seconds
  double first_chunk_latency = 0.0;     // ms, median over repeats
  double last_chunk_latency = 0.0;      // ms from start until the last chunk is ready
  double parallel_latency = 0.0;        // ms, full-sequence masked forward
  double rtf_incremental = 0.0;         // last_chunk_latency (s) / audio duration (s)
  double rtf_parallel = 0.0;            // parallel_latency / audio duration
  std::vector<double> per_chunk_median_ms;  // compute time of each chunk
  double first_chunk_p90 = 0.0;
  double parallel_p90 = 0.0;
};

// Times incremental and parallel decoding on seeded random features.
template <typename T>
BenchResult bench(const DecoderConfig& cfg, const DecoderWeights<T>& weights,
                  const BenchConfig& bc, std::uint64_t seed = 1);
nlohmann::json to_json(const BenchResult& r);

// Deterministic N(0,1) features [frames x d_model].
template <typename T>
Tensor<T> random_features(std::size_t frames, std::size_t d_model, std::uint64_t seed);

}  // namespace chunkdec
