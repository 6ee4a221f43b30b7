#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "dusel/nn.hpp"

namespace dusel {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; a byte-swapping reader would be needed here");

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError("truncated header");
  return v;
}
inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError("truncated header");
  return v;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointMagic = 0x4e4c5544;  // "DULN"
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_net(const MlpNet& net, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open for write: " + path.string());
  detail::write_u32(os, kCheckpointMagic);
  detail::write_u32(os, kCheckpointVersion);
  detail::write_u32(os, static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    detail::write_u32(os, static_cast<std::uint32_t>(l.w.rows));
    detail::write_u32(os, static_cast<std::uint32_t>(l.w.cols));
    detail::write_u32(os, static_cast<std::uint32_t>(l.act));
    os.write(reinterpret_cast<const char*>(l.w.a.data()),
             static_cast<std::streamsize>(l.w.a.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(l.b.data()),
             static_cast<std::streamsize>(l.b.size() * sizeof(double)));
  }
  if (!os) throw CheckpointError("write failed: " + path.string());
}

inline MlpNet load_net(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open: " + path.string());
  if (detail::read_u32(is) != kCheckpointMagic) throw CheckpointError("bad magic: " + path.string());
  std::uint32_t version = detail::read_u32(is);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  std::uint32_t n_layers = detail::read_u32(is);
  MlpNet net;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    std::uint32_t in = detail::read_u32(is);
    std::uint32_t out = detail::read_u32(is);
    std::uint32_t act = detail::read_u32(is);
    if (act > static_cast<std::uint32_t>(Act::Softmax))
      throw CheckpointError("bad activation id in " + path.string());
    Layer l;
    l.w = Matrix(static_cast<int>(in), static_cast<int>(out));
    l.b.assign(out, 0.0);
    l.act = static_cast<Act>(act);
    if (!is.read(reinterpret_cast<char*>(l.w.a.data()),
                 static_cast<std::streamsize>(l.w.a.size() * sizeof(double))) ||
        !is.read(reinterpret_cast<char*>(l.b.data()),
                 static_cast<std::streamsize>(l.b.size() * sizeof(double))))
      throw CheckpointError("truncated payload in " + path.string());
    net.layers.push_back(std::move(l));
  }
  return net;
}

// Human-readable companion: layer dims and activations, one per line.
inline std::string net_manifest(const MlpNet& net) {
  std::ostringstream os;
  os << "layers " << net.layers.size() << "\n";
  for (const auto& l : net.layers)
    os << l.w.rows << " -> " << l.w.cols << " " << act_name(l.act) << "\n";
  return os.str();
}

inline void save_net_manifest(const MlpNet& net, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw CheckpointError("cannot open for write: " + path.string());
  os << net_manifest(net);
}

}  // namespace dusel
