#pragma once

#include <filesystem>
#include <iosfwd>

#include "chunkdec/decoder.hpp"

namespace chunkdec {

// CFPW: "CFPW", u64-length JSON config block, u32 tensor count, then per tensor
// a u64-length name and a CTN1 tensor. Tensors are stored in cfg.dtype.
template <typename T>
void write_weights(std::ostream& os, const DecoderConfig& cfg, const DecoderWeights<T>& w);

struct LoadedModel {
  DecoderConfig config;
  DecoderWeights<double> weights;  // converted from the stored dtype
};

LoadedModel read_weights(std::istream& is);

template <typename T>
void save_weights(const std::filesystem::path& path, const DecoderConfig& cfg,
                  const DecoderWeights<T>& w);
LoadedModel load_weights(const std::filesystem::path& path);

// CFPS: "CFPS", u64 frame_offset, then per layer: pk per head, pv per head,
// pc1, pc2 as CTN1 tensors.
template <typename T>
void write_state(std::ostream& os, const DecoderState<T>& st);
template <typename T>
DecoderState<T> read_state(std::istream& is, const DecoderConfig& cfg);

template <typename T>
void save_state(const std::filesystem::path& path, const DecoderState<T>& st);
template <typename T>
DecoderState<T> load_state(const std::filesystem::path& path, const DecoderConfig& cfg);

}  // namespace chunkdec
