#include "chunkdec/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <stdexcept>

#include "chunkdec/run_config.hpp"
#include "chunkdec/synthetic_task.hpp"

namespace chunkdec {

template <typename T>
double msd(const Tensor<T>& a, const Tensor<T>& b, MsdMetric metric) {
  if (a.shape() != b.shape() || a.ndim() != 2) {
    throw DimensionError("msd: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  if (a.rows() == 0) return 0.0;
  double total = 0;
  for (std::size_t t = 0; t < a.rows(); ++t) {
    double sq = 0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double d = double(a.at(t, j)) - double(b.at(t, j));
      sq += d * d;
    }
    total += metric == MsdMetric::frame_l2 ? std::sqrt(sq) : sq / double(a.cols());
  }
  return total / double(a.rows());
}

template <typename T>
Tensor<T> random_features(std::size_t frames, std::size_t d_model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor<T> x({frames, d_model});
  for (auto& v : x.values()) v = static_cast<T>(dist(rng));
  return x;
}

double default_equivalence_tolerance(DType dtype) { return dtype == DType::f64 ? 1e-9 : 1e-4; }

namespace {

template <typename T>
SweepCell run_cell(const DecoderConfig& cfg, std::size_t frames, std::uint64_t seed) {
  SweepCell cell{cfg, frames, seed};
  const auto w = init_weights<T>(cfg, seed);
  const auto x = random_features<T>(frames, cfg.d_model, seed ^ 0xabcdefULL);
  const auto inc = concat_chunks(decode_incremental(cfg, w, x));
  const auto par =
      decode_parallel_masked(cfg, w, x, build_static_mask(frames, cfg.chunk_size, cfg.past));
  for (std::size_t t = 0; t < inc.rows(); ++t)
    for (std::size_t j = 0; j < inc.cols(); ++j) {
      const double d = std::abs(double(inc.at(t, j)) - double(par.at(t, j)));
      if (d > cell.max_abs_diff || std::isnan(d)) {
        cell.max_abs_diff = std::isnan(d) ? std::numeric_limits<double>::infinity() : d;
        cell.argmax_frame = t;
        cell.argmax_bin = j;
      }
    }
  return cell;
}

}  // namespace

SweepReport equivalence_sweep(const SweepGrid& grid, std::size_t seeds, DType dtype,
                              double tolerance, std::uint64_t base_seed) {
  const auto t0 = std::chrono::steady_clock::now();
  SweepReport rep;
  rep.dtype = dtype;
  rep.tolerance = tolerance;
  std::uint64_t counter = 0;
  for (auto nd : grid.layers)
    for (auto h : grid.heads)
      for (auto d : grid.d_model) {
        if (d % h != 0) continue;
        for (auto sc : grid.chunk) {
          std::vector<std::size_t> pasts{0, (sc + 1) / 2, sc, 2 * sc + 1};
          std::vector<std::size_t> lengths{1, sc, 3 * sc + 2, 50};
          std::sort(lengths.begin(), lengths.end());
          lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());
          for (auto sp : pasts)
            for (auto frames : lengths)
              for (std::size_t s = 0; s < seeds; ++s) {
                DecoderConfig cfg;
                cfg.layers = nd;
                cfg.heads = h;
                cfg.d_model = d;
                cfg.d_ff = 2 * d;
                cfg.kernel1 = grid.kernel1;
                cfg.kernel2 = grid.kernel2;
                cfg.chunk_size = sc;
                cfg.past = PastSize::frames(sp);
                cfg.mel_bins = grid.mel_bins;
                cfg.dtype = dtype;
                const std::uint64_t seed = base_seed * 1000003ULL + (counter++);
                SweepCell cell = dtype == DType::f64 ? run_cell<double>(cfg, frames, seed)
                                                     : run_cell<float>(cfg, frames, seed);
                rep.max_abs_diff = std::max(rep.max_abs_diff, cell.max_abs_diff);
                if (!(cell.max_abs_diff <= tolerance)) rep.failures.push_back(rep.cells.size());
                rep.cells.push_back(std::move(cell));
              }
        }
      }
  rep.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

nlohmann::json to_json(const SweepCell& c) {
  return {{"config", to_json(c.cfg)},
          {"frames", c.frames},
          {"seed", c.seed},
          {"max_abs_diff", c.max_abs_diff},
          {"argmax", {{"frame", c.argmax_frame}, {"bin", c.argmax_bin}}}};
}

nlohmann::json to_json(const SweepReport& rep, bool include_cells) {
  nlohmann::json j = {{"dtype", dtype_name(rep.dtype)},
                      {"tolerance", rep.tolerance},
                      {"cells", rep.cells.size()},
                      {"max_abs_diff", rep.max_abs_diff},
                      {"passed", rep.passed()},
                      {"seconds", rep.seconds}};
  nlohmann::json failures = nlohmann::json::array();
  for (auto i : rep.failures) failures.push_back(to_json(rep.cells[i]));
  j["failures"] = failures;
  if (include_cells) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : rep.cells) cells.push_back(to_json(c));
    j["grid_results"] = cells;
  }
  return j;
}

const char* ablation_name(AblationMode m) {
  switch (m) {
    case AblationMode::drop_kv: return "drop_kv";
    case AblationMode::drop_conv: return "drop_conv";
    case AblationMode::drop_both: return "drop_both";
  }
  return "unknown";
}

AblationMode parse_ablation(const std::string& s) {
  if (s == "drop_kv") return AblationMode::drop_kv;
  if (s == "drop_conv") return AblationMode::drop_conv;
  if (s == "drop_both") return AblationMode::drop_both;
  throw std::invalid_argument("unknown ablation mode: " + s);
}

StateAblation ablation_flags(AblationMode m) {
  return {m != AblationMode::drop_conv, m != AblationMode::drop_kv};
}

template <typename T>
BoundaryStat boundary_jumps(const Tensor<T>& mel, std::size_t chunk_size) {
  BoundaryStat s;
  std::size_t nb = 0, ni = 0;
  for (std::size_t t = 1; t < mel.rows(); ++t) {
    double jump = 0;
    for (std::size_t j = 0; j < mel.cols(); ++j)
      jump += std::abs(double(mel.at(t, j)) - double(mel.at(t - 1, j)));
    jump /= double(mel.cols());
    if (t % chunk_size == 0) {
      s.boundary += jump;
      ++nb;
    } else {
      s.interior += jump;
      ++ni;
    }
  }
  if (nb) s.boundary /= double(nb);
  if (ni) s.interior /= double(ni);
  return s;
}

AblationReport ablation_check(const DecoderConfig& cfg, AblationMode mode,
                              const AblationConfig& ac, std::uint64_t base_seed) {
  cfg.validate();
  AblationReport rep;
  rep.mode = mode;
  rep.cfg = cfg;
  rep.diff_threshold = ac.diff_threshold;
  std::size_t over = 0, increased = 0;
  for (std::size_t s = 0; s < ac.seeds; ++s) {
    const std::uint64_t seed = base_seed * 7919ULL + s;
    const auto w = init_weights<double>(cfg, seed);
    TaskConfig tc;
    tc.seed = seed + 101;
    const auto task = SyntheticTask::make(cfg.d_model, cfg.mel_bins, tc);
    std::mt19937_64 rng(seed);
    const auto x = task_features(task, ac.frames, rng);
    const auto intact = concat_chunks(decode_incremental(cfg, w, x));
    const auto ablated = concat_chunks(decode_incremental(cfg, w, x, ablation_flags(mode)));
    AblationSeed r;
    r.seed = seed;
    r.max_abs_diff = max_abs_diff(intact, ablated);
    r.intact = boundary_jumps(intact, cfg.chunk_size);
    r.ablated = boundary_jumps(ablated, cfg.chunk_size);
    if (r.max_abs_diff > ac.diff_threshold) ++over;
    if (r.ablated.boundary > r.intact.boundary) ++increased;
    rep.mean_intact_boundary += r.intact.boundary / double(ac.seeds);
    rep.mean_ablated_boundary += r.ablated.boundary / double(ac.seeds);
    rep.seeds.push_back(r);
  }
  rep.fraction_over_threshold = ac.seeds ? double(over) / double(ac.seeds) : 0.0;
  rep.fraction_boundary_increase = ac.seeds ? double(increased) / double(ac.seeds) : 0.0;
  return rep;
}

nlohmann::json to_json(const AblationReport& rep) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : rep.seeds) {
    seeds.push_back({{"seed", s.seed},
                     {"max_abs_diff", s.max_abs_diff},
                     {"intact_boundary", s.intact.boundary},
                     {"intact_interior", s.intact.interior},
                     {"ablated_boundary", s.ablated.boundary},
                     {"ablated_interior", s.ablated.interior}});
  }
  return {{"mode", ablation_name(rep.mode)},
          {"config", to_json(rep.cfg)},
          {"diff_threshold", rep.diff_threshold},
          {"fraction_over_threshold", rep.fraction_over_threshold},
          {"fraction_boundary_increase", rep.fraction_boundary_increase},
          {"mean_intact_boundary", rep.mean_intact_boundary},
          {"mean_ablated_boundary", rep.mean_ablated_boundary},
          {"seeds", seeds}};
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * double(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

}  // namespace

template <typename T>
BenchResult bench(const DecoderConfig& cfg, const DecoderWeights<T>& weights,
                  const BenchConfig& bc, std::uint64_t seed) {
  if (bc.frames == 0 || bc.repeats == 0) throw std::invalid_argument("bench: frames and repeats must be positive");
  const auto x = random_features<T>(bc.frames, cfg.d_model, seed);
  const auto chunks = split_chunks(x, cfg.chunk_size);

  std::vector<double> first, last, parallel;
  std::vector<std::vector<double>> per_chunk(chunks.size());
  for (std::size_t r = 0; r < bc.warmup + bc.repeats; ++r) {
    const bool record = r >= bc.warmup;
    {
      const auto t0 = Clock::now();
      StreamingDecoder<T> dec(cfg, weights);
      double first_ms = 0;
      for (std::size_t c = 0; c < chunks.size(); ++c) {
        const auto tc = Clock::now();
        auto mel = dec.push(chunks[c]);
        if (record) per_chunk[c].push_back(ms_since(tc));
        if (c == 0) first_ms = ms_since(t0);
      }
      if (record) {
        first.push_back(first_ms);
        last.push_back(ms_since(t0));
      }
    }
    {
      const auto t0 = Clock::now();
      auto mask = build_static_mask(bc.frames, cfg.chunk_size, cfg.past);
      auto mel = decode_parallel_masked(cfg, weights, x, mask);
      if (record) parallel.push_back(ms_since(t0));
    }
  }

  BenchResult res;
  res.total_frames = bc.frames;
  res.chunk_size = cfg.chunk_size;
  res.repeats = bc.repeats;
  res.audio_duration = audio_duration_seconds(bc.frames);
  res.first_chunk_latency = percentile(first, 0.5);
  res.last_chunk_latency = percentile(last, 0.5);
  res.parallel_latency = percentile(parallel, 0.5);
  res.first_chunk_p90 = percentile(first, 0.9);
  res.parallel_p90 = percentile(parallel, 0.9);
  res.rtf_incremental = res.last_chunk_latency / 1000.0 / res.audio_duration;
  res.rtf_parallel = res.parallel_latency / 1000.0 / res.audio_duration;
  for (const auto& c : per_chunk) res.per_chunk_median_ms.push_back(percentile(c, 0.5));
  return res;
}

nlohmann::json to_json(const BenchResult& r) {
  return {{"frames", r.total_frames},
          {"chunk_size", r.chunk_size},
          {"repeats", r.repeats},
          {"audio_duration_s", r.audio_duration},
          {"first_ms", r.first_chunk_latency},
          {"first_ms_p90", r.first_chunk_p90},
          {"last_ms", r.last_chunk_latency},
          {"parallel_ms", r.parallel_latency},
          {"parallel_ms_p90", r.parallel_p90},
          {"rtf", r.rtf_incremental},
          {"rtf_parallel", r.rtf_parallel},
          {"per_chunk_median_ms", r.per_chunk_median_ms}};
}

template double msd(const Tensor<float>&, const Tensor<float>&, MsdMetric);
template double msd(const Tensor<double>&, const Tensor<double>&, MsdMetric);
template Tensor<float> random_features<float>(std::size_t, std::size_t, std::uint64_t);
template Tensor<double> random_features<double>(std::size_t, std::size_t, std::uint64_t);
template BoundaryStat boundary_jumps(const Tensor<float>&, std::size_t);
template BoundaryStat boundary_jumps(const Tensor<double>&, std::size_t);
template BenchResult bench(const DecoderConfig&, const DecoderWeights<float>&, const BenchConfig&,
                           std::uint64_t);
template BenchResult bench(const DecoderConfig&, const DecoderWeights<double>&,
                           const BenchConfig&, std::uint64_t);

}  // namespace chunkdec
