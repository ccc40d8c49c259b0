#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chunkdec/trainer.hpp"

namespace chunkdec {

// Train-mask vs inference-cache mismatch study on the synthetic task.
struct StudyConfig {
  std::size_t chunk = 30;
  std::vector<std::size_t> train_pasts{0, 5, 15, 30};
  bool include_dynamic = true;
  std::vector<std::size_t> infer_pasts{0, 5, 15, 30, 90};
  std::size_t steps = 2000;
  std::size_t seeds = 3;
  std::size_t eval_frames = 150;
  std::size_t eval_batch = 4;
  std::size_t mismatch_gap = 85;  // |train past - infer past| counted as gross mismatch
};

struct StudyCell {
  std::string regime;
  std::uint64_t seed = 0;
  std::size_t infer_chunk = 0;
  std::size_t infer_past = 0;
  double msd = 0.0;  // incremental decode vs task targets, mean over the eval batch
};

struct TrendCheck {
  std::string regime;
  std::uint64_t seed = 0;
  std::size_t matched_past = 0;
  std::size_t mismatched_past = 0;
  double matched_msd = 0.0;
  double mismatched_msd = 0.0;
  bool matched_wins() const { return matched_msd < mismatched_msd; }
};

struct StudyReport {
  std::vector<std::string> regimes;
  std::vector<std::size_t> infer_pasts;
  std::size_t infer_chunk = 0;
  std::vector<StudyCell> cells;
  std::vector<TrendCheck> trend;
  std::size_t seeds = 0;
  std::size_t seeds_with_trend = 0;  // seeds where every trend check holds
  double seconds = 0.0;

  bool trend_holds() const { return trend.size() > 0 && 2 * seeds_with_trend > seeds; }
  double mean_msd(const std::string& regime, std::size_t infer_past) const;
};

using StudyProgressFn = std::function<void(const std::string& regime, std::uint64_t seed)>;

StudyReport run_mask_study(const DecoderConfig& base, const SyntheticTask& task,
                           const TrainConfig& base_train, const StudyConfig& sc,
                           std::uint64_t base_seed, const StudyProgressFn& progress = {});

// Rows: train regime; columns: inference past size; values: mean MSD over seeds.
std::string study_table_csv(const StudyReport& rep);
// One row per (regime, seed, inference config).
std::string study_cells_csv(const StudyReport& rep);
nlohmann::json to_json(const StudyReport& rep);

}  // namespace chunkdec
