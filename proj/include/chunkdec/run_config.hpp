#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "chunkdec/decoder.hpp"
#include "chunkdec/eval.hpp"
#include "chunkdec/study.hpp"
#include "chunkdec/trainer.hpp"

namespace chunkdec {

inline constexpr int kRunConfigSchema = 1;

// One JSON document drives every subcommand. Unknown keys are rejected.
struct RunConfig {
  DecoderConfig decoder;
  TrainConfig train;
  TaskConfig task;
  SweepGrid sweep;
  StudyConfig study;
  BenchConfig bench;
  AblationConfig ablation;
  std::uint64_t seed = 1;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const DecoderConfig& cfg);
DecoderConfig decoder_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const MaskRegime& r);
MaskRegime mask_regime_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace chunkdec
