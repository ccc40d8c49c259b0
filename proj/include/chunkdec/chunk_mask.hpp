#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "chunkdec/tensor.hpp"

namespace chunkdec {

// Look-back width of the attention cache / training mask. `all()` keeps every
// earlier frame.
class PastSize {
 public:
  constexpr PastSize() = default;
  static constexpr PastSize frames(std::size_t n) { return PastSize(n, false); }
  static constexpr PastSize all() { return PastSize(0, true); }

  constexpr bool is_all() const { return all_; }
  constexpr std::size_t value() const { return n_; }
  // Frames kept when `available` frames precede a chunk.
  constexpr std::size_t clamp(std::size_t available) const {
    return all_ || n_ > available ? available : n_;
  }

  std::string str() const { return all_ ? "all" : std::to_string(n_); }
  static PastSize parse(const std::string& s);

  constexpr bool operator==(const PastSize&) const = default;

 private:
  constexpr PastSize(std::size_t n, bool all) : n_(n), all_(all) {}
  std::size_t n_ = 0;
  bool all_ = false;
};

struct ChunkMask {
  BoolMatrix permitted;  // [query][key]
  std::size_t chunk_size = 0;
  PastSize past;
  std::size_t total_frames = 0;
};

// Frames [c*S_c, min((c+1)*S_c, T)) form chunk c; each query sees its own chunk
// plus the `past` frames immediately before the chunk start.
ChunkMask build_static_mask(std::size_t total_frames, std::size_t chunk_size, PastSize past);

struct DynamicMaskPolicy {
  std::size_t chunk_min = 1;
  std::size_t chunk_max = 50;
  // nullopt stands for "all".
  std::vector<std::optional<double>> past_multipliers{0.0, 0.25, 0.5, 1.0, 2.0, 3.0,
                                                      std::nullopt};

  void validate() const;
};

struct MaskDraw {
  std::size_t chunk_size;
  PastSize past;
};

// past = floor(multiplier * chunk) or all.
MaskDraw draw_mask_sizes(const DynamicMaskPolicy& policy, std::mt19937_64& rng);
ChunkMask sample_dynamic_mask(std::size_t total_frames, const DynamicMaskPolicy& policy,
                              std::mt19937_64& rng);

std::string mask_to_ascii(const ChunkMask& mask);
// Binary PGM (P5): permitted = black.
std::string mask_to_pgm(const ChunkMask& mask);

}  // namespace chunkdec
