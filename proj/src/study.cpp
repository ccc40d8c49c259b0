#include "chunkdec/study.hpp"

#include <chrono>
#include <cstdlib>
#include <sstream>

#include "chunkdec/eval.hpp"

namespace chunkdec {

double StudyReport::mean_msd(const std::string& regime, std::size_t infer_past) const {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& c : cells)
    if (c.regime == regime && c.infer_past == infer_past) {
      sum += c.msd;
      ++n;
    }
  return n ? sum / double(n) : 0.0;
}

namespace {

std::size_t gap(std::size_t a, std::size_t b) { return a > b ? a - b : b - a; }

}  // namespace

StudyReport run_mask_study(const DecoderConfig& base, const SyntheticTask& task,
                           const TrainConfig& base_train, const StudyConfig& sc,
                           std::uint64_t base_seed, const StudyProgressFn& progress) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<MaskRegime> regimes;
  for (auto p : sc.train_pasts) regimes.push_back(MaskRegime::fixed(sc.chunk, PastSize::frames(p)));
  if (sc.include_dynamic) regimes.push_back(MaskRegime::dynamic(base_train.regime.policy));

  StudyReport rep;
  rep.infer_pasts = sc.infer_pasts;
  rep.infer_chunk = sc.chunk;
  rep.seeds = sc.seeds;
  for (const auto& r : regimes) rep.regimes.push_back(r.label());

  for (std::size_t s = 0; s < sc.seeds; ++s) {
    const std::uint64_t seed = base_seed + s;
    std::mt19937_64 eval_rng(seed ^ 0x51ed270b27a3f1c5ULL);
    const Batch eval = generate_batch(task, sc.eval_frames, sc.eval_batch, eval_rng);
    bool all_hold = true;
    bool any_check = false;
    for (const auto& regime : regimes) {
      if (progress) progress(regime.label(), seed);
      TrainConfig tc = base_train;
      tc.steps = sc.steps;
      tc.regime = regime;
      tc.seed = seed;
      const TrainResult trained = train(base, task, tc);

      std::vector<double> row;
      for (auto p : sc.infer_pasts) {
        DecoderConfig infer = base;
        infer.chunk_size = sc.chunk;
        infer.past = PastSize::frames(p);
        double total = 0;
        for (std::size_t i = 0; i < eval.features.size(); ++i) {
          auto mel = concat_chunks(decode_incremental(infer, trained.weights, eval.features[i]));
          total += msd(mel, eval.targets[i]);
        }
        row.push_back(total / double(eval.features.size()));
        rep.cells.push_back({regime.label(), seed, sc.chunk, p, row.back()});
      }

      if (regime.kind != MaskRegime::Kind::static_mask || regime.past.is_all()) continue;
      const std::size_t tp = regime.past.value();
      std::size_t matched = sc.infer_pasts.size(), worst = sc.infer_pasts.size();
      for (std::size_t i = 0; i < sc.infer_pasts.size(); ++i) {
        const auto p = sc.infer_pasts[i];
        if (p == tp && regime.chunk == sc.chunk) matched = i;
        if (gap(p, tp) >= sc.mismatch_gap &&
            (worst == sc.infer_pasts.size() || gap(p, tp) > gap(sc.infer_pasts[worst], tp)))
          worst = i;
      }
      if (matched == sc.infer_pasts.size() || worst == sc.infer_pasts.size()) continue;
      TrendCheck tcheck{regime.label(), seed, tp, sc.infer_pasts[worst], row[matched], row[worst]};
      any_check = true;
      all_hold = all_hold && tcheck.matched_wins();
      rep.trend.push_back(tcheck);
    }
    if (any_check && all_hold) ++rep.seeds_with_trend;
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

std::string study_table_csv(const StudyReport& rep) {
  std::ostringstream os;
  os.precision(10);
  os << "train_regime";
  for (auto p : rep.infer_pasts) os << ",infer(" << rep.infer_chunk << ";" << p << ")";
  os << "\n";
  for (const auto& r : rep.regimes) {
    os << r;
    for (auto p : rep.infer_pasts) os << "," << rep.mean_msd(r, p);
    os << "\n";
  }
  return os.str();
}

std::string study_cells_csv(const StudyReport& rep) {
  std::ostringstream os;
  os.precision(10);
  os << "train_regime,seed,infer_chunk,infer_past,msd\n";
  for (const auto& c : rep.cells)
    os << c.regime << "," << c.seed << "," << c.infer_chunk << "," << c.infer_past << "," << c.msd
       << "\n";
  return os.str();
}

nlohmann::json to_json(const StudyReport& rep) {
  nlohmann::json table = nlohmann::json::object();
  for (const auto& r : rep.regimes) {
    nlohmann::json row = nlohmann::json::object();
    for (auto p : rep.infer_pasts) row[std::to_string(p)] = rep.mean_msd(r, p);
    table[r] = row;
  }
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : rep.cells)
    cells.push_back({{"regime", c.regime},
                     {"seed", c.seed},
                     {"infer_chunk", c.infer_chunk},
                     {"infer_past", c.infer_past},
                     {"msd", c.msd}});
  nlohmann::json trend = nlohmann::json::array();
  for (const auto& t : rep.trend)
    trend.push_back({{"regime", t.regime},
                     {"seed", t.seed},
                     {"matched_past", t.matched_past},
                     {"mismatched_past", t.mismatched_past},
                     {"matched_msd", t.matched_msd},
                     {"mismatched_msd", t.mismatched_msd},
                     {"matched_wins", t.matched_wins()}});
  return {{"infer_chunk", rep.infer_chunk},
          {"table", table},
          {"cells", cells},
          {"trend", trend},
          {"seeds", rep.seeds},
          {"seeds_with_trend", rep.seeds_with_trend},
          {"trend_holds", rep.trend_holds()},
          {"seconds", rep.seconds}};
}

}  // namespace chunkdec
