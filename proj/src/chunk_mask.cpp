#include "chunkdec/chunk_mask.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace chunkdec {

PastSize PastSize::parse(const std::string& s) {
  if (s == "all" || s == "ALL") return all();
  std::size_t pos = 0;
  long long v = -1;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || v < 0) throw std::invalid_argument("invalid past size: " + s);
  return frames(static_cast<std::size_t>(v));
}

ChunkMask build_static_mask(std::size_t total_frames, std::size_t chunk_size, PastSize past) {
  if (chunk_size == 0) throw std::invalid_argument("chunk size must be >= 1");
  if (total_frames == 0) throw std::invalid_argument("mask needs at least one frame");
  ChunkMask mask{BoolMatrix(total_frames, total_frames), chunk_size, past, total_frames};
  for (std::size_t start = 0; start < total_frames; start += chunk_size) {
    const std::size_t end = std::min(start + chunk_size, total_frames);
    const std::size_t first = start - past.clamp(start);
    for (std::size_t q = start; q < end; ++q)
      for (std::size_t k = first; k < end; ++k) mask.permitted.set(q, k, true);
  }
  return mask;
}

void DynamicMaskPolicy::validate() const {
  if (chunk_min < 1 || chunk_min > chunk_max) {
    throw std::invalid_argument("dynamic mask policy needs 1 <= chunk_min <= chunk_max");
  }
  if (past_multipliers.empty()) {
    throw std::invalid_argument("dynamic mask policy needs at least one past multiplier");
  }
  for (const auto& m : past_multipliers) {
    if (m && (*m < 0 || !std::isfinite(*m))) {
      throw std::invalid_argument("past multipliers must be finite and >= 0");
    }
  }
}

MaskDraw draw_mask_sizes(const DynamicMaskPolicy& policy, std::mt19937_64& rng) {
  policy.validate();
  std::uniform_int_distribution<std::size_t> chunk_dist(policy.chunk_min, policy.chunk_max);
  std::uniform_int_distribution<std::size_t> mult_dist(0, policy.past_multipliers.size() - 1);
  const std::size_t chunk = chunk_dist(rng);
  const auto& mult = policy.past_multipliers[mult_dist(rng)];
  if (!mult) return {chunk, PastSize::all()};
  return {chunk, PastSize::frames(
                     static_cast<std::size_t>(std::floor(*mult * static_cast<double>(chunk))))};
}

ChunkMask sample_dynamic_mask(std::size_t total_frames, const DynamicMaskPolicy& policy,
                              std::mt19937_64& rng) {
  const auto draw = draw_mask_sizes(policy, rng);
  return build_static_mask(total_frames, draw.chunk_size, draw.past);
}

std::string mask_to_ascii(const ChunkMask& mask) {
  const auto& m = mask.permitted;
  std::string out;
  out.reserve(m.rows * (m.cols + 1));
  for (std::size_t q = 0; q < m.rows; ++q) {
    for (std::size_t k = 0; k < m.cols; ++k) out += m(q, k) ? '#' : '.';
    out += '\n';
  }
  return out;
}

std::string mask_to_pgm(const ChunkMask& mask) {
  const auto& m = mask.permitted;
  std::string out = "P5\n" + std::to_string(m.cols) + " " + std::to_string(m.rows) + "\n255\n";
  for (std::size_t q = 0; q < m.rows; ++q)
    for (std::size_t k = 0; k < m.cols; ++k) out += static_cast<char>(m(q, k) ? 0 : 255);
  return out;
}

}  // namespace chunkdec
