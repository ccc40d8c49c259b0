#include "chunkdec/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>

namespace chunkdec {

namespace {

using nlohmann::json;

void check_object(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    const bool known = std::any_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; });
    if (!known) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

json past_to_json(PastSize p) { return p.is_all() ? json("all") : json(p.value()); }

PastSize past_from_json(const json& j, const std::string& where) {
  if (j.is_string() && j.get<std::string>() == "all") return PastSize::all();
  if (j.is_number_unsigned()) return PastSize::frames(j.get<std::size_t>());
  throw ConfigError(where + ": past must be a non-negative integer or \"all\"");
}

void read_past(const json& j, const char* key, PastSize& out, const std::string& where) {
  if (j.contains(key)) out = past_from_json(j.at(key), where + "." + key);
}

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw ConfigError("dtype must be f32 or f64, got '" + s + "'");
}

}  // namespace

json to_json(const DecoderConfig& c) {
  return {{"layers", c.layers},       {"heads", c.heads},
          {"d_model", c.d_model},     {"kernel1", c.kernel1},
          {"kernel2", c.kernel2},     {"d_ff", c.d_ff},
          {"chunk_size", c.chunk_size}, {"past", past_to_json(c.past)},
          {"mel_bins", c.mel_bins},   {"eps_ln", c.eps_ln},
          {"dtype", dtype_name(c.dtype)}};
}

DecoderConfig decoder_config_from_json(const json& j) {
  const std::string w = "decoder";
  check_object(j, {"layers", "heads", "d_model", "kernel1", "kernel2", "d_ff", "chunk_size", "past",
                   "mel_bins", "eps_ln", "dtype"},
               w);
  DecoderConfig c;
  read(j, "layers", c.layers, w);
  read(j, "heads", c.heads, w);
  read(j, "d_model", c.d_model, w);
  read(j, "kernel1", c.kernel1, w);
  read(j, "kernel2", c.kernel2, w);
  read(j, "d_ff", c.d_ff, w);
  read(j, "chunk_size", c.chunk_size, w);
  read_past(j, "past", c.past, w);
  read(j, "mel_bins", c.mel_bins, w);
  read(j, "eps_ln", c.eps_ln, w);
  std::string dt = dtype_name(c.dtype);
  read(j, "dtype", dt, w);
  c.dtype = parse_dtype(dt);
  try {
    c.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("decoder: ") + e.what());
  }
  return c;
}

json to_json(const MaskRegime& r) {
  json mults = json::array();
  for (const auto& m : r.policy.past_multipliers) mults.push_back(m ? json(*m) : json("all"));
  return {{"kind", r.kind == MaskRegime::Kind::static_mask ? "static" : "dynamic"},
          {"chunk", r.chunk},
          {"past", past_to_json(r.past)},
          {"chunk_min", r.policy.chunk_min},
          {"chunk_max", r.policy.chunk_max},
          {"past_multipliers", mults}};
}

MaskRegime mask_regime_from_json(const json& j) {
  const std::string w = "train.regime";
  check_object(j, {"kind", "chunk", "past", "chunk_min", "chunk_max", "past_multipliers"}, w);
  MaskRegime r;
  std::string kind = "static";
  read(j, "kind", kind, w);
  if (kind == "static") r.kind = MaskRegime::Kind::static_mask;
  else if (kind == "dynamic") r.kind = MaskRegime::Kind::dynamic_mask;
  else throw ConfigError(w + ".kind must be static or dynamic");
  read(j, "chunk", r.chunk, w);
  read_past(j, "past", r.past, w);
  read(j, "chunk_min", r.policy.chunk_min, w);
  read(j, "chunk_max", r.policy.chunk_max, w);
  if (j.contains("past_multipliers")) {
    const auto& arr = j.at("past_multipliers");
    if (!arr.is_array()) throw ConfigError(w + ".past_multipliers must be an array");
    r.policy.past_multipliers.clear();
    for (const auto& m : arr) {
      if (m.is_string() && m.get<std::string>() == "all") r.policy.past_multipliers.push_back(std::nullopt);
      else if (m.is_number()) r.policy.past_multipliers.push_back(m.get<double>());
      else throw ConfigError(w + ".past_multipliers entries must be numbers or \"all\"");
    }
  }
  if (r.chunk == 0) throw ConfigError(w + ".chunk must be positive");
  try {
    r.policy.validate();
  } catch (const std::exception& e) {
    throw ConfigError(w + ": " + e.what());
  }
  return r;
}

json to_json(const RunConfig& c) {
  const auto& t = c.train;
  return {
      {"schema", kRunConfigSchema},
      {"seed", c.seed},
      {"decoder", to_json(c.decoder)},
      {"train",
       {{"lr", t.adam.lr},
        {"beta1", t.adam.beta1},
        {"beta2", t.adam.beta2},
        {"eps", t.adam.eps},
        {"weight_decay", t.adam.weight_decay},
        {"batch_size", t.batch_size},
        {"clip_norm", t.clip_norm},
        {"steps", t.steps},
        {"frames", t.frames},
        {"eval_batch", t.eval_batch},
        {"regime", to_json(t.regime)}}},
      {"task",
       {{"seed", c.task.seed},
        {"sinusoids", c.task.sinusoids},
        {"min_freq", c.task.min_freq},
        {"max_freq", c.task.max_freq}}},
      {"sweep",
       {{"layers", c.sweep.layers},
        {"heads", c.sweep.heads},
        {"d_model", c.sweep.d_model},
        {"chunk", c.sweep.chunk},
        {"kernel1", c.sweep.kernel1},
        {"kernel2", c.sweep.kernel2},
        {"mel_bins", c.sweep.mel_bins}}},
      {"study",
       {{"chunk", c.study.chunk},
        {"train_pasts", c.study.train_pasts},
        {"include_dynamic", c.study.include_dynamic},
        {"infer_pasts", c.study.infer_pasts},
        {"steps", c.study.steps},
        {"seeds", c.study.seeds},
        {"eval_frames", c.study.eval_frames},
        {"eval_batch", c.study.eval_batch},
        {"mismatch_gap", c.study.mismatch_gap}}},
      {"bench",
       {{"frames", c.bench.frames}, {"repeats", c.bench.repeats}, {"warmup", c.bench.warmup}}},
      {"ablation",
       {{"frames", c.ablation.frames},
        {"seeds", c.ablation.seeds},
        {"diff_threshold", c.ablation.diff_threshold},
        {"pass_fraction", c.ablation.pass_fraction}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  check_object(j, {"schema", "seed", "decoder", "train", "task", "sweep", "study", "bench", "ablation"},
               "config");
  if (!j.contains("schema")) throw ConfigError("config: missing \"schema\"");
  if (j.at("schema") != kRunConfigSchema) {
    throw ConfigError("config: unsupported schema " + j.at("schema").dump());
  }
  RunConfig c;
  read(j, "seed", c.seed, "config");
  if (j.contains("decoder")) c.decoder = decoder_config_from_json(j.at("decoder"));

  if (j.contains("train")) {
    const auto& t = j.at("train");
    const std::string w = "train";
    check_object(t, {"lr", "beta1", "beta2", "eps", "weight_decay", "batch_size", "clip_norm", "steps",
                     "frames", "eval_batch", "regime"},
                 w);
    read(t, "lr", c.train.adam.lr, w);
    read(t, "beta1", c.train.adam.beta1, w);
    read(t, "beta2", c.train.adam.beta2, w);
    read(t, "eps", c.train.adam.eps, w);
    read(t, "weight_decay", c.train.adam.weight_decay, w);
    read(t, "batch_size", c.train.batch_size, w);
    read(t, "clip_norm", c.train.clip_norm, w);
    read(t, "steps", c.train.steps, w);
    read(t, "frames", c.train.frames, w);
    read(t, "eval_batch", c.train.eval_batch, w);
    if (t.contains("regime")) c.train.regime = mask_regime_from_json(t.at("regime"));
    if (!(c.train.adam.lr >= 0) || c.train.steps == 0 || c.train.batch_size == 0 ||
        c.train.frames == 0) {
      throw ConfigError("train: lr must be >= 0 and steps, batch_size, frames positive");
    }
  }
  c.train.seed = c.seed;

  if (j.contains("task")) {
    const auto& t = j.at("task");
    check_object(t, {"seed", "sinusoids", "min_freq", "max_freq"}, "task");
    read(t, "seed", c.task.seed, "task");
    read(t, "sinusoids", c.task.sinusoids, "task");
    read(t, "min_freq", c.task.min_freq, "task");
    read(t, "max_freq", c.task.max_freq, "task");
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    check_object(s, {"layers", "heads", "d_model", "chunk", "kernel1", "kernel2", "mel_bins"}, "sweep");
    read(s, "layers", c.sweep.layers, "sweep");
    read(s, "heads", c.sweep.heads, "sweep");
    read(s, "d_model", c.sweep.d_model, "sweep");
    read(s, "chunk", c.sweep.chunk, "sweep");
    read(s, "kernel1", c.sweep.kernel1, "sweep");
    read(s, "kernel2", c.sweep.kernel2, "sweep");
    read(s, "mel_bins", c.sweep.mel_bins, "sweep");
  }
  if (j.contains("study")) {
    const auto& s = j.at("study");
    check_object(s, {"chunk", "train_pasts", "include_dynamic", "infer_pasts", "steps", "seeds",
                     "eval_frames", "eval_batch", "mismatch_gap"},
                 "study");
    read(s, "chunk", c.study.chunk, "study");
    read(s, "train_pasts", c.study.train_pasts, "study");
    read(s, "include_dynamic", c.study.include_dynamic, "study");
    read(s, "infer_pasts", c.study.infer_pasts, "study");
    read(s, "steps", c.study.steps, "study");
    read(s, "seeds", c.study.seeds, "study");
    read(s, "eval_frames", c.study.eval_frames, "study");
    read(s, "eval_batch", c.study.eval_batch, "study");
    read(s, "mismatch_gap", c.study.mismatch_gap, "study");
  }
  if (j.contains("bench")) {
    const auto& b = j.at("bench");
    check_object(b, {"frames", "repeats", "warmup"}, "bench");
    read(b, "frames", c.bench.frames, "bench");
    read(b, "repeats", c.bench.repeats, "bench");
    read(b, "warmup", c.bench.warmup, "bench");
  }
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    check_object(a, {"frames", "seeds", "diff_threshold", "pass_fraction"}, "ablation");
    read(a, "frames", c.ablation.frames, "ablation");
    read(a, "seeds", c.ablation.seeds, "ablation");
    read(a, "diff_threshold", c.ablation.diff_threshold, "ablation");
    read(a, "pass_fraction", c.ablation.pass_fraction, "ablation");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::ios_base::failure("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace chunkdec
