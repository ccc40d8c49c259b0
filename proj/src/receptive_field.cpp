#include "chunkdec/receptive_field.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace chunkdec {

std::size_t receptive_field_formula(std::size_t layers, std::size_t past, std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("chunk size must be >= 1");
  return (layers + past / chunk + 1) * chunk;
}

ReceptiveFieldReport receptive_field_oracle(std::size_t layers, std::size_t past,
                                            std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("chunk size must be >= 1");
  if (layers == 0) throw std::invalid_argument("layer count must be >= 1");

  // Each layer can look back at most ceil(past/chunk) chunks; leave margin.
  const std::size_t back_per_layer = (past + chunk - 1) / chunk;
  const std::size_t target = layers * back_per_layer + 2;
  const std::size_t n_chunks = target + 1;
  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();

  // dep[l][f]: earliest layer-0 input frame reaching layer l's output at frame f.
  // cache[l]: earliest-dependency of each cached key/value at layer l (they
  // share provenance, since both are projections of the same input frame).
  std::vector<std::vector<std::size_t>> dep(layers + 1,
                                            std::vector<std::size_t>(n_chunks * chunk, none));
  std::vector<std::vector<std::size_t>> cache(layers + 1);
  for (std::size_t f = 0; f < n_chunks * chunk; ++f) dep[0][f] = f;

  for (std::size_t c = 0; c < n_chunks; ++c) {
    const std::size_t start = c * chunk, end = start + chunk;
    for (std::size_t l = 1; l <= layers; ++l) {
      // k = concat(past cache, this chunk's keys)
      std::vector<std::size_t> keys = cache[l];
      for (std::size_t f = start; f < end; ++f) keys.push_back(dep[l - 1][f]);
      std::size_t attended = none;
      for (auto d : keys) attended = std::min(attended, d);
      for (std::size_t f = start; f < end; ++f) {
        // residual path plus every key/value the chunk attends to
        dep[l][f] = std::min(dep[l - 1][f], attended);
      }
      const std::size_t keep = std::min(past, keys.size());
      cache[l].assign(keys.end() - static_cast<std::ptrdiff_t>(keep), keys.end());
    }
  }

  ReceptiveFieldReport rep;
  rep.layers = layers;
  rep.past = past;
  rep.chunk = chunk;
  rep.r_formula = receptive_field_formula(layers, past, chunk);
  const std::size_t t_start = target * chunk, t_end = t_start + chunk;
  for (std::size_t l = 1; l <= layers; ++l) {
    std::size_t earliest = none;
    for (std::size_t f = t_start; f < t_end; ++f) earliest = std::min(earliest, dep[l][f]);
    rep.per_layer.push_back(
        {l, earliest, t_end - earliest, target - earliest / chunk + 1});
  }
  rep.r_frames = rep.per_layer.back().frames;
  rep.r_oracle = rep.per_layer.back().chunks * chunk;
  return rep;
}

}  // namespace chunkdec
