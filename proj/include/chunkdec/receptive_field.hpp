#pragma once

#include <cstddef>
#include <vector>

namespace chunkdec {

// R = (N_d + floor(S_p / S_c) + 1) * S_c
std::size_t receptive_field_formula(std::size_t layers, std::size_t past, std::size_t chunk);

struct LayerReach {
  std::size_t layer;            // 1-based: reach after this many blocks
  std::size_t earliest_frame;   // earliest input frame influencing the target chunk
  std::size_t frames;           // target chunk end - earliest_frame
  std::size_t chunks;           // whole chunks touched, target chunk included
};

struct ReceptiveFieldReport {
  std::size_t layers = 0;
  std::size_t past = 0;
  std::size_t chunk = 0;
  std::size_t r_formula = 0;
  // Chunk-granular reach in frames: chunks touched * S_c.
  std::size_t r_oracle = 0;
  // Exact frame reach (target chunk end - earliest frame).
  std::size_t r_frames = 0;
  std::vector<LayerReach> per_layer;

  bool agrees() const { return r_formula == r_oracle; }
};

// Symbolically replays incremental decoding (attention caches only, feed-forward
// omitted) and tracks, for every cached key/value and every output frame, the
// earliest input frame it depends on. The target is a chunk far enough from the
// sequence start that the reach is not truncated.
ReceptiveFieldReport receptive_field_oracle(std::size_t layers, std::size_t past,
                                            std::size_t chunk);

}  // namespace chunkdec
