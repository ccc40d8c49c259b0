#include "chunkdec/model_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "chunkdec/run_config.hpp"
#include "chunkdec/tensor_io.hpp"

namespace chunkdec {

template <typename T>
void write_weights(std::ostream& os, const DecoderConfig& cfg, const DecoderWeights<T>& w) {
  binio::write_magic(os, "CFPW");
  nlohmann::json block = {{"schema", kRunConfigSchema}, {"decoder", to_json(cfg)}};
  binio::write_string(os, block.dump());
  const auto named = named_tensors(w);
  binio::write_u32(os, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    binio::write_string(os, name);
    if (cfg.dtype == DType::f32) write_ctn(os, t.template cast<float>());
    else write_ctn(os, t.template cast<double>());
  }
}

LoadedModel read_weights(std::istream& is) {
  binio::expect_magic(is, "CFPW");
  nlohmann::json block;
  try {
    block = nlohmann::json::parse(binio::read_string(is));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("CFPW: bad config block: ") + e.what());
  }
  if (!block.contains("schema") || block["schema"] != kRunConfigSchema || !block.contains("decoder")) {
    throw FormatError("CFPW: unsupported config block");
  }
  LoadedModel m;
  try {
    m.config = decoder_config_from_json(block["decoder"]);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("CFPW: ") + e.what());
  }
  const auto count = binio::read_u32(is);
  std::map<std::string, Tensor<double>> named;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = binio::read_string(is);
    named.emplace(std::move(name), read_ctn_as<double>(is));
  }
  try {
    m.weights = weights_from_named<double>(m.config, named);
  } catch (const std::exception& e) {
    throw FormatError(std::string("CFPW: ") + e.what());
  }
  return m;
}

template <typename T>
void save_weights(const std::filesystem::path& path, const DecoderConfig& cfg,
                  const DecoderWeights<T>& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_weights(os, cfg, w);
  if (!os) throw FormatError("write failed: " + path.string());
}

LoadedModel load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_weights(is);
}

template <typename T>
void write_state(std::ostream& os, const DecoderState<T>& st) {
  binio::write_magic(os, "CFPS");
  binio::write_u64(os, st.frame_offset);
  for (const auto& layer : st.layers) {
    for (const auto& t : layer.attn.pk) write_ctn(os, t);
    for (const auto& t : layer.attn.pv) write_ctn(os, t);
    write_ctn(os, layer.conv.pc1);
    write_ctn(os, layer.conv.pc2);
  }
}

template <typename T>
DecoderState<T> read_state(std::istream& is, const DecoderConfig& cfg) {
  binio::expect_magic(is, "CFPS");
  DecoderState<T> st;
  st.frame_offset = binio::read_u64(is);
  auto expect = [](const Tensor<T>& t, std::size_t max_rows, std::size_t cols, bool exact,
                   const char* what) {
    if (t.ndim() != 2 || t.cols() != cols || t.rows() > max_rows ||
        (exact && t.rows() != max_rows)) {
      throw FormatError(std::string("CFPS: ") + what + " has shape " + shape_str(t.shape()));
    }
  };
  const std::size_t max_past =
      cfg.past.is_all() ? static_cast<std::size_t>(st.frame_offset) : cfg.past.value();
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    LayerState<T> layer;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      layer.attn.pk.push_back(read_ctn_as<T>(is));
      expect(layer.attn.pk.back(), max_past, cfg.d_head(), false, "past keys");
    }
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      layer.attn.pv.push_back(read_ctn_as<T>(is));
      expect(layer.attn.pv.back(), layer.attn.pk.front().rows(), cfg.d_head(), true,
             "past values");
    }
    layer.conv.pc1 = read_ctn_as<T>(is);
    expect(layer.conv.pc1, cfg.kernel1 - 1, cfg.d_model, true, "conv state 1");
    layer.conv.pc2 = read_ctn_as<T>(is);
    expect(layer.conv.pc2, cfg.kernel2 - 1, cfg.d_ff, true, "conv state 2");
    st.layers.push_back(std::move(layer));
  }
  return st;
}

template <typename T>
void save_state(const std::filesystem::path& path, const DecoderState<T>& st) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_state(os, st);
  if (!os) throw FormatError("write failed: " + path.string());
}

template <typename T>
DecoderState<T> load_state(const std::filesystem::path& path, const DecoderConfig& cfg) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_state<T>(is, cfg);
}

#define CHUNKDEC_INSTANTIATE(T)                                                           \
  template void write_weights(std::ostream&, const DecoderConfig&, const DecoderWeights<T>&); \
  template void save_weights(const std::filesystem::path&, const DecoderConfig&,          \
                             const DecoderWeights<T>&);                                   \
  template void write_state(std::ostream&, const DecoderState<T>&);                       \
  template DecoderState<T> read_state<T>(std::istream&, const DecoderConfig&);            \
  template void save_state(const std::filesystem::path&, const DecoderState<T>&);         \
  template DecoderState<T> load_state<T>(const std::filesystem::path&, const DecoderConfig&);

CHUNKDEC_INSTANTIATE(float)
CHUNKDEC_INSTANTIATE(double)

#undef CHUNKDEC_INSTANTIATE

}  // namespace chunkdec
