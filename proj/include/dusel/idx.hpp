#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dusel/dataset.hpp"

namespace dusel {

// IDX binary ingestion (the MNIST/USPS container: big-endian dims, magic
// 0x00000803 for images, 0x00000801 for labels, unsigned-byte payload).

struct IdxError : std::runtime_error {
  std::size_t offset;
  IdxError(const std::string& msg, std::size_t off)
      : std::runtime_error(msg + " (byte offset " + std::to_string(off) + ")"), offset(off) {}
};
struct IdxBadMagic : IdxError {
  using IdxError::IdxError;
};
struct IdxTruncated : IdxError {
  using IdxError::IdxError;
};
struct IdxCountMismatch : IdxError {
  using IdxError::IdxError;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace idx_detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IdxError("cannot open " + path.string(), 0);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  if (off + 4 > b.size())
    throw IdxTruncated("truncated while reading a big-endian u32: need 4 bytes, have " +
                           std::to_string(b.size() - off),
                       off);
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

struct IdxPayload {
  std::vector<std::uint32_t> dims;
  std::size_t data_offset;
  const std::vector<unsigned char> bytes;
};

inline IdxPayload parse(const std::filesystem::path& path, std::uint32_t expected_magic) {
  auto bytes = read_file(path);
  std::uint32_t magic = read_be32(bytes, 0);
  if (magic != expected_magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "0x%08x, expected 0x%08x", magic, expected_magic);
    throw IdxBadMagic("bad IDX magic " + std::string(buf) + " in " + path.string(), 0);
  }
  std::size_t ndims = magic & 0xff;
  std::vector<std::uint32_t> dims(ndims);
  std::size_t off = 4;
  std::uint64_t total = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    dims[i] = read_be32(bytes, off);
    off += 4;
    total *= dims[i];
  }
  if (bytes.size() - off != total)
    throw IdxTruncated("payload length mismatch: expected " + std::to_string(total) +
                           " bytes, found " + std::to_string(bytes.size() - off),
                       off);
  return IdxPayload{std::move(dims), off, std::move(bytes)};
}

}  // namespace idx_detail

// Loads an IDX image file (and optional label file) into a Dataset. Pixels
// are flattened row-major and scaled to [0, 1].
inline Dataset load_idx(const std::filesystem::path& images_path,
                        std::optional<std::filesystem::path> labels_path = std::nullopt,
                        const std::string& name = "idx") {
  auto img = idx_detail::parse(images_path, kIdxImagesMagic);
  std::uint64_t n = img.dims.empty() ? 0 : img.dims[0];
  std::uint64_t d = 1;
  for (std::size_t i = 1; i < img.dims.size(); ++i) d *= img.dims[i];
  if (n == 0 || d == 0) throw IdxError("empty IDX image file " + images_path.string(), 4);

  Matrix f(static_cast<int>(n), static_cast<int>(d));
  for (std::size_t i = 0; i < n * d; ++i)
    f.a[i] = static_cast<double>(img.bytes[img.data_offset + i]) / 255.0;

  std::optional<std::vector<int>> labels;
  int num_classes = 0;
  if (labels_path) {
    auto lab = idx_detail::parse(*labels_path, kIdxLabelsMagic);
    std::uint64_t n_lab = lab.dims.empty() ? 0 : lab.dims[0];
    if (n_lab != n)
      throw IdxCountMismatch("label count " + std::to_string(n_lab) + " != image count " +
                                 std::to_string(n),
                             4);
    labels.emplace(n_lab);
    for (std::size_t i = 0; i < n_lab; ++i) {
      int y = lab.bytes[lab.data_offset + i];
      (*labels)[i] = y;
      num_classes = std::max(num_classes, y + 1);
    }
  }
  return Dataset(std::move(f), std::move(labels), num_classes, DomainTag::Source, name);
}

}  // namespace dusel
