// Binary checkpoint format.
//
//   magic "MSLOCCKP" | u32 version | ModelConfig (8 x u64)
//   u64 tensor count | per tensor: u32 name length, name bytes, u32 rank,
//                      rank x u64 extents, numel x f64
//
// All integers and reals are little-endian regardless of host byte order.
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "msloc/model.hpp"

namespace msloc {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'M', 'S', 'L', 'O', 'C', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace io {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), 8);
}
inline void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), 4);
}
inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }
inline void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void put_f64s(std::ostream& os, std::span<const double> v) {
  for (double x : v) put_f64(os, x);
}

inline void need(std::istream& is, const char* what) {
  if (!is) throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
}
inline std::uint64_t get_u64(std::istream& is, const char* what) {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), 8);
  need(is, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
inline std::uint32_t get_u32(std::istream& is, const char* what) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  need(is, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}
inline double get_f64(std::istream& is, const char* what) { return std::bit_cast<double>(get_u64(is, what)); }
inline std::string get_string(std::istream& is, const char* what, std::size_t max_len = 1 << 16) {
  const std::uint32_t n = get_u32(is, what);
  if (n > max_len) throw CheckpointError(std::string("implausible string length while reading ") + what);
  std::string s(n, '\0');
  is.read(s.data(), n);
  need(is, what);
  return s;
}
inline void get_f64s(std::istream& is, std::span<double> out, const char* what) {
  for (double& x : out) x = get_f64(is, what);
}

inline void put_config(std::ostream& os, const ModelConfig& c) {
  for (std::size_t v : {c.num_blocks, c.layers_per_block, c.growth_rate, c.stem_channels, c.input_height,
                        c.input_width, c.num_classes, c.kernel_size})
    put_u64(os, v);
}
inline ModelConfig get_config(std::istream& is) {
  ModelConfig c;
  c.num_blocks = get_u64(is, "config.num_blocks");
  c.layers_per_block = get_u64(is, "config.layers_per_block");
  c.growth_rate = get_u64(is, "config.growth_rate");
  c.stem_channels = get_u64(is, "config.stem_channels");
  c.input_height = get_u64(is, "config.input_height");
  c.input_width = get_u64(is, "config.input_width");
  c.num_classes = get_u64(is, "config.num_classes");
  c.kernel_size = get_u64(is, "config.kernel_size");
  return c;
}

}  // namespace io

inline void write_model(std::ostream& os, const Model& model) {
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  io::put_u32(os, kCheckpointVersion);
  io::put_config(os, model.config);
  const auto params = model.parameters();
  io::put_u64(os, params.size());
  for (const auto& p : params) {
    io::put_string(os, p.name);
    io::put_u32(os, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) io::put_u64(os, d);
    io::put_f64s(os, p.tensor.data());
  }
}

/// Names the first ModelConfig field in which `found` differs from `expected`.
inline void check_config_matches(const ModelConfig& expected, const ModelConfig& found) {
  auto check = [](std::size_t e, std::size_t f, const char* name) {
    if (e != f)
      throw CheckpointError(std::string("checkpoint field ") + name + " is " + std::to_string(f) + ", expected " +
                            std::to_string(e));
  };
  check(expected.num_blocks, found.num_blocks, "num_blocks");
  check(expected.layers_per_block, found.layers_per_block, "layers_per_block");
  check(expected.growth_rate, found.growth_rate, "growth_rate");
  check(expected.stem_channels, found.stem_channels, "stem_channels");
  check(expected.input_height, found.input_height, "input_height");
  check(expected.input_width, found.input_width, "input_width");
  check(expected.num_classes, found.num_classes, "num_classes");
  check(expected.kernel_size, found.kernel_size, "kernel_size");
}

/// Reads a model; nothing is returned unless every tensor was read and
/// validated against the structure implied by the stored configuration.
inline Model read_model(std::istream& is, const ModelConfig* expected = nullptr) {
  char magic[8];
  is.read(magic, 8);
  io::need(is, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw CheckpointError("not a model checkpoint (bad magic)");
  const std::uint32_t version = io::get_u32(is, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  const ModelConfig cfg = io::get_config(is);
  if (expected) check_config_matches(*expected, cfg);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint holds an invalid configuration: ") + e.what());
  }

  Model model = init_model(cfg, 0);
  auto params = model.parameters();
  const std::uint64_t count = io::get_u64(is, "tensor count");
  if (count != params.size())
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, configuration implies " +
                          std::to_string(params.size()));
  for (auto& p : params) {
    const std::string name = io::get_string(is, "tensor name");
    if (name != p.name) throw CheckpointError("expected tensor '" + p.name + "', found '" + name + "'");
    const std::uint32_t rank = io::get_u32(is, "tensor rank");
    if (rank != p.tensor.rank()) throw CheckpointError("rank mismatch for tensor '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = io::get_u64(is, "tensor extent");
    if (shape != p.tensor.shape())
      throw CheckpointError("shape mismatch for tensor '" + name + "': file " + shape_str(shape) + ", expected " +
                            shape_str(p.tensor.shape()));
    io::get_f64s(is, p.tensor.mutable_data(), "tensor values");
  }
  return model;
}

inline void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
  write_model(os, model);
  os.flush();
  if (!os) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

inline Model load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return read_model(is, expected);
}

}  // namespace msloc
