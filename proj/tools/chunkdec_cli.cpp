#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "chunkdec/chunk_mask.hpp"
#include "chunkdec/decoder.hpp"
#include "chunkdec/eval.hpp"
#include "chunkdec/model_io.hpp"
#include "chunkdec/receptive_field.hpp"
#include "chunkdec/run_config.hpp"
#include "chunkdec/study.hpp"
#include "chunkdec/tensor_io.hpp"
#include "chunkdec/trainer.hpp"

using namespace chunkdec;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;
constexpr int kIoError = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool dump_config = false;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig rc = g.config_path.empty() ? RunConfig{} : load_run_config(g.config_path);
  if (g.seed) rc.seed = *g.seed;
  rc.train.seed = rc.seed;
  return rc;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::ios_base::failure("cannot open " + path + " for writing");
  os << text;
  if (!os) throw std::ios_base::failure("write failed: " + path);
}

DType parse_dtype_arg(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw UsageError("dtype must be f32 or f64");
}

// ---- subcommands -------------------------------------------------------------

struct EquivArgs {
  std::size_t seeds = 1;
  std::string dtype = "f64";
  std::optional<double> tol;
  bool cells = false;
};

int cmd_equiv(const Globals& g, const EquivArgs& a) {
  const RunConfig rc = resolve_config(g);
  const DType dt = parse_dtype_arg(a.dtype);
  const double tol = a.tol.value_or(default_equivalence_tolerance(dt));
  const SweepReport rep = equivalence_sweep(rc.sweep, a.seeds, dt, tol, rc.seed);
  std::cout << to_json(rep, a.cells).dump(2) << "\n";
  if (!rep.passed()) {
    const auto& c = rep.cells[rep.failures.front()];
    std::cerr << "equivalence failed in " << rep.failures.size() << " cells; first: "
              << to_json(c).dump() << "\n";
    return kCheckFailed;
  }
  return kOk;
}

struct RfArgs {
  std::size_t layers = 0, chunk = 0, past = 0;
  bool oracle = false;
};

int cmd_rf(const RfArgs& a) {
  if (a.chunk == 0 || a.layers == 0) throw UsageError("--layers and --chunk must be positive");
  const std::size_t r = receptive_field_formula(a.layers, a.past, a.chunk);
  if (!a.oracle) {
    std::cout << r << "\n";
    return kOk;
  }
  const auto rep = receptive_field_oracle(a.layers, a.past, a.chunk);
  std::cout << "formula " << rep.r_formula << "\n"
            << "oracle " << rep.r_oracle << "\n"
            << "oracle_frames " << rep.r_frames << "\n"
            << "delta " << static_cast<long long>(rep.r_oracle) - static_cast<long long>(rep.r_formula)
            << "\n";
  return kOk;
}

struct MaskArgs {
  std::size_t frames = 0, chunk = 0;
  std::string past = "0";
  std::string format = "ascii";
  std::string out;
};

int cmd_mask(const MaskArgs& a) {
  PastSize past;
  try {
    past = PastSize::parse(a.past);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  const ChunkMask m = build_static_mask(a.frames, a.chunk, past);
  if (a.format == "ascii") write_text(a.out, mask_to_ascii(m));
  else if (a.format == "pgm") {
    if (a.out.empty()) throw UsageError("--format pgm needs --out");
    write_text(a.out, mask_to_pgm(m));
  } else throw UsageError("--format must be ascii or pgm");
  return kOk;
}

struct TrainArgs {
  std::string mask;
  std::string out;
  std::string log;
  std::optional<std::size_t> steps;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  RunConfig rc = resolve_config(g);
  if (a.mask == "static") {
    if (rc.train.regime.kind != MaskRegime::Kind::static_mask)
      rc.train.regime = MaskRegime::fixed(rc.decoder.chunk_size, rc.decoder.past);
  } else if (a.mask == "dynamic") {
    rc.train.regime = MaskRegime::dynamic(rc.train.regime.policy);
  } else if (!a.mask.empty()) {
    throw UsageError("--mask must be static or dynamic");
  }
  if (a.steps) rc.train.steps = *a.steps;
  if (rc.train.steps == 0) throw UsageError("--steps must be positive");
  const auto task = SyntheticTask::make(rc.decoder.d_model, rc.decoder.mel_bins, rc.task);
  const std::size_t every = std::max<std::size_t>(1, rc.train.steps / 20);
  const auto res = train(rc.decoder, task, rc.train, [&](std::size_t step, const StepReport& r) {
    if (step % every == 0 || step + 1 == rc.train.steps)
      std::cerr << "step " << step << " loss " << r.loss << " grad_norm " << r.grad_norm << "\n";
  });
  if (!a.out.empty()) save_weights(a.out, rc.decoder, res.weights);
  nlohmann::json log = {{"config", to_json(rc)},
                        {"regime", rc.train.regime.label()},
                        {"eval_loss_before", res.eval_loss_before},
                        {"eval_loss_after", res.eval_loss_after}};
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : res.log)
    steps.push_back({{"loss", s.loss}, {"grad_norm", s.grad_norm}, {"clipped", s.clipped}});
  log["steps"] = steps;
  if (!a.log.empty()) write_text(a.log, log.dump(1) + "\n");
  std::cout << nlohmann::json{{"eval_loss_before", res.eval_loss_before},
                              {"eval_loss_after", res.eval_loss_after},
                              {"ratio", res.eval_loss_after / res.eval_loss_before}}
                   .dump()
            << "\n";
  return kOk;
}

struct SynthArgs {
  std::string model, features, mode = "incremental", out, state_in, state_out, past;
  std::optional<std::size_t> chunk;
  std::optional<std::size_t> max_chunks;
};

template <typename T>
int run_synth(const DecoderConfig& cfg, const DecoderWeights<double>& w64, const AnyTensor& feats,
              const SynthArgs& a) {
  const auto w = cast_weights<T>(w64);
  const Tensor<T> x = std::visit([](const auto& t) { return t.template cast<T>(); }, feats);
  if (x.ndim() != 2 || x.cols() != cfg.d_model) {
    throw DimensionError("features " + shape_str(x.shape()) + " do not match d_model " +
                         std::to_string(cfg.d_model));
  }
  Tensor<T> mel;
  if (a.mode == "parallel") {
    if (!a.state_in.empty() || !a.state_out.empty() || a.max_chunks) {
      throw UsageError("state options apply to --mode incremental only");
    }
    mel = decode_parallel_masked(cfg, w, x, build_static_mask(x.rows(), cfg.chunk_size, cfg.past));
  } else if (a.mode == "incremental") {
    DecoderState<T> st = a.state_in.empty() ? initial_state<T>(cfg) : load_state<T>(a.state_in, cfg);
    if (st.frame_offset > x.rows()) {
      throw DimensionError("state offset " + std::to_string(st.frame_offset) +
                           " is past the end of the features (" + std::to_string(x.rows()) + ")");
    }
    const std::size_t start = st.frame_offset;
    Tensor<T> rest({x.rows() - start, x.cols()});
    for (std::size_t t = start; t < x.rows(); ++t)
      for (std::size_t j = 0; j < x.cols(); ++j) rest.at(t - start, j) = x.at(t, j);
    StreamingDecoder<T> dec(cfg, w, std::move(st));
    std::vector<Tensor<T>> out;
    for (const auto& c : split_chunks(rest, cfg.chunk_size)) {
      if (a.max_chunks && out.size() >= *a.max_chunks) break;
      out.push_back(dec.push(c));
    }
    mel = out.empty() ? Tensor<T>({0, cfg.mel_bins}) : concat_chunks(out);
    if (!a.state_out.empty()) save_state(a.state_out, dec.state());
  } else {
    throw UsageError("--mode must be incremental or parallel");
  }
  save_ctn(a.out, mel);
  std::cerr << "wrote " << shape_str(mel.shape()) << " to " << a.out << "\n";
  return kOk;
}

int cmd_synth(const SynthArgs& a) {
  LoadedModel m = load_weights(a.model);
  if (a.chunk) m.config.chunk_size = *a.chunk;
  if (!a.past.empty()) {
    try {
      m.config.past = PastSize::parse(a.past);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  m.config.validate();
  const AnyTensor feats = load_ctn(a.features);
  return m.config.dtype == DType::f32 ? run_synth<float>(m.config, m.weights, feats, a)
                                      : run_synth<double>(m.config, m.weights, feats, a);
}

struct BenchArgs {
  std::string model;
  std::optional<std::size_t> frames, repeats;
  bool json = false;
};

int cmd_bench(const Globals& g, const BenchArgs& a) {
  RunConfig rc = resolve_config(g);
  BenchConfig bc = rc.bench;
  if (a.frames) bc.frames = *a.frames;
  if (a.repeats) bc.repeats = *a.repeats;
  DecoderConfig cfg = rc.decoder;
  DecoderWeights<double> w;
  if (!a.model.empty()) {
    auto m = load_weights(a.model);
    cfg = m.config;
    w = std::move(m.weights);
  } else {
    w = init_weights<double>(cfg, rc.seed);
  }
  const BenchResult r = cfg.dtype == DType::f32 ? bench(cfg, cast_weights<float>(w), bc, rc.seed)
                                                : bench(cfg, w, bc, rc.seed);
  if (a.json) {
    std::cout << nlohmann::json{{"config", to_json(cfg)}, {"bench", to_json(r)}}.dump(2) << "\n";
  } else {
    std::cout << "frames " << r.total_frames << " chunk " << r.chunk_size << " repeats "
              << r.repeats << "\n"
              << "first_chunk_ms " << r.first_chunk_latency << "\n"
              << "last_chunk_ms " << r.last_chunk_latency << "\n"
              << "parallel_ms " << r.parallel_latency << "\n"
              << "rtf_incremental " << r.rtf_incremental << "\n"
              << "rtf_parallel " << r.rtf_parallel << "\n";
  }
  return kOk;
}

struct MsdArgs {
  std::string a, b, metric = "frame_l2";
};

int cmd_msd(const MsdArgs& m) {
  MsdMetric metric;
  if (m.metric == "frame_l2") metric = MsdMetric::frame_l2;
  else if (m.metric == "mean_squared") metric = MsdMetric::mean_squared;
  else throw UsageError("--metric must be frame_l2 or mean_squared");
  const auto a = std::visit([](const auto& t) { return t.template cast<double>(); }, load_ctn(m.a));
  const auto b = std::visit([](const auto& t) { return t.template cast<double>(); }, load_ctn(m.b));
  std::ostringstream os;
  os.precision(17);
  os << msd(a, b, metric);
  std::string s = os.str();
  if (s.find_first_of(".eE") == std::string::npos && s.find("inf") == std::string::npos &&
      s.find("nan") == std::string::npos)
    s += ".0";
  std::cout << s << "\n";
  return kOk;
}

struct StudyArgs {
  std::string out, json;
  std::optional<std::size_t> steps, seeds;
};

int cmd_study(const Globals& g, const StudyArgs& a) {
  const RunConfig rc = resolve_config(g);
  StudyConfig sc = rc.study;
  if (a.steps) sc.steps = *a.steps;
  if (a.seeds) sc.seeds = *a.seeds;
  const auto task = SyntheticTask::make(rc.decoder.d_model, rc.decoder.mel_bins, rc.task);
  const auto rep = run_mask_study(rc.decoder, task, rc.train, sc, rc.seed,
                                  [](const std::string& regime, std::uint64_t seed) {
                                    std::cerr << "training " << regime << " seed " << seed << "\n";
                                  });
  write_text(a.out, study_table_csv(rep));
  if (!a.json.empty()) write_text(a.json, to_json(rep).dump(2) + "\n");
  std::cerr << "trend holds in " << rep.seeds_with_trend << "/" << rep.seeds << " seeds\n";
  return kOk;
}

struct AblateArgs {
  std::string mode = "drop_both";
};

int cmd_ablate(const Globals& g, const AblateArgs& a) {
  const RunConfig rc = resolve_config(g);
  AblationMode mode;
  try {
    mode = parse_ablation(a.mode);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  const auto rep = ablation_check(rc.decoder, mode, rc.ablation, rc.seed);
  std::cout << to_json(rep).dump(2) << "\n";
  const bool ok = rep.fraction_over_threshold >= rc.ablation.pass_fraction &&
                  rep.mean_ablated_boundary > rep.mean_intact_boundary;
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chunk-based incremental decoder toolkit"};
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for every random draw");
  app.add_flag("--dump-config", g.dump_config, "Print the resolved config with all defaults");

  EquivArgs equiv;
  auto* c_equiv = app.add_subcommand("equiv", "Incremental vs masked-parallel equivalence sweep");
  c_equiv->add_option("--seeds", equiv.seeds, "Seeds per grid cell");
  c_equiv->add_option("--dtype", equiv.dtype, "f32 or f64");
  c_equiv->add_option("--tol", equiv.tol, "Max abs diff allowed");
  c_equiv->add_flag("--cells", equiv.cells, "Include every cell in the JSON output");

  RfArgs rf;
  auto* c_rf = app.add_subcommand("rf", "Receptive field of the chunked decoder");
  c_rf->add_option("--layers", rf.layers)->required();
  c_rf->add_option("--chunk", rf.chunk)->required();
  c_rf->add_option("--past", rf.past)->required();
  c_rf->add_flag("--oracle", rf.oracle, "Also run the dependency traversal");

  MaskArgs mask;
  auto* c_mask = app.add_subcommand("mask", "Render a chunk attention mask");
  c_mask->add_option("--frames", mask.frames)->required();
  c_mask->add_option("--chunk", mask.chunk)->required();
  c_mask->add_option("--past", mask.past, "Frames or 'all'");
  c_mask->add_option("--format", mask.format, "ascii or pgm");
  c_mask->add_option("--out", mask.out);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train on the synthetic task");
  c_train->add_option("--mask", tr.mask, "static or dynamic");
  c_train->add_option("--out", tr.out, "Output CFPW weights");
  c_train->add_option("--log", tr.log, "Output JSON training log");
  c_train->add_option("--steps", tr.steps);

  SynthArgs sy;
  auto* c_synth = app.add_subcommand("synth", "Decode features to Mel");
  c_synth->add_option("--model", sy.model)->required();
  c_synth->add_option("--features", sy.features)->required();
  c_synth->add_option("--mode", sy.mode, "incremental or parallel");
  c_synth->add_option("--chunk", sy.chunk);
  c_synth->add_option("--past", sy.past, "Frames or 'all'");
  c_synth->add_option("--out", sy.out)->required();
  c_synth->add_option("--state-in", sy.state_in, "Resume from a CFPS state");
  c_synth->add_option("--state-out", sy.state_out, "Write the final CFPS state");
  c_synth->add_option("--max-chunks", sy.max_chunks, "Stop after this many chunks");

  BenchArgs be;
  auto* c_bench = app.add_subcommand("bench", "Latency and RTF");
  c_bench->add_option("--model", be.model);
  c_bench->add_option("--frames", be.frames);
  c_bench->add_option("--repeats", be.repeats);
  c_bench->add_flag("--json", be.json);

  MsdArgs ms;
  auto* c_msd = app.add_subcommand("msd", "Mel-spectrogram distance between two CTN1 files");
  c_msd->add_option("a", ms.a)->required();
  c_msd->add_option("b", ms.b)->required();
  c_msd->add_option("--metric", ms.metric, "frame_l2 or mean_squared");

  StudyArgs st;
  auto* c_study = app.add_subcommand("study", "Train-mask vs inference-cache study");
  c_study->add_option("--out", st.out, "CSV table (default stdout)");
  c_study->add_option("--json", st.json, "Full JSON report");
  c_study->add_option("--steps", st.steps);
  c_study->add_option("--seeds", st.seeds);

  AblateArgs ab;
  auto* c_ablate = app.add_subcommand("ablate", "Drop caches between chunks and measure the damage");
  c_ablate->add_option("--mode", ab.mode, "drop_kv, drop_conv or drop_both");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (g.dump_config) {
      std::cout << to_json(resolve_config(g)).dump(2) << "\n";
      return kOk;
    }
    if (*c_equiv) return cmd_equiv(g, equiv);
    if (*c_rf) return cmd_rf(rf);
    if (*c_mask) return cmd_mask(mask);
    if (*c_train) return cmd_train(g, tr);
    if (*c_synth) return cmd_synth(sy);
    if (*c_bench) return cmd_bench(g, be);
    if (*c_msd) return cmd_msd(ms);
    if (*c_study) return cmd_study(g, st);
    if (*c_ablate) return cmd_ablate(g, ab);
    std::cerr << app.help();
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const DimensionError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kIoError;
  } catch (const TrainingError& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return kCheckFailed;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
}
