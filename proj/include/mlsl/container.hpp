#pragma once
/// @file container.hpp
/// @brief Shared envelope for the binary dataset (SLTD1) and model (SLMD1)
/// files.
///
/// Layout, all integers little-endian:
///   bytes 0..3   ASCII tag ("SLTD" or "SLMD")
///   byte  4      reserved, 0
///   byte  5      format version (1)
///   bytes 6..7   reserved, 0
///   u64          length L of the metadata block
///   L bytes      UTF-8 JSON metadata
///   f64[...]     payload arrays, little-endian IEEE-754 binary64
///   u32          CRC-32 (zlib polynomial) of every preceding byte

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace mlsl {

class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint8_t kContainerVersion = 1;

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

/// Append-only little-endian byte sink.
class ByteWriter {
public:
  void put_u8(std::uint8_t v) { buf_.push_back(v); }

  template <class T>
  void put_le(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t k = 0; k < sizeof(T); ++k) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * k)) & 0xFF));
  }

  void put_f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }

  void put_f64s(std::span<const double> vs) {
    for (double v : vs) put_f64(v);
  }

  void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  std::vector<std::uint8_t>& bytes() { return buf_; }
  const std::vector<std::uint8_t>& bytes() const { return buf_; }

private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader over an in-memory buffer.
class ByteReader {
public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t remaining() const { return data_.size() - pos_; }

  std::uint8_t get_u8() {
    need(1);
    return data_[pos_++];
  }

  template <class T>
  T get_le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t k = 0; k < sizeof(T); ++k) v |= static_cast<T>(static_cast<T>(data_[pos_ + k]) << (8 * k));
    pos_ += sizeof(T);
    return v;
  }

  double get_f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

  void get_f64s(std::span<double> out) {
    need(out.size() * 8);
    for (double& v : out) v = get_f64();
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

private:
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError("container: unexpected end of data");
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

/// Starts a container: tag, version bytes, metadata block.
inline ByteWriter begin_container(std::string_view tag, const nlohmann::json& meta) {
  ByteWriter w;
  w.put_bytes(tag);
  w.put_u8(0);
  w.put_u8(kContainerVersion);
  w.put_u8(0);
  w.put_u8(0);
  const std::string text = meta.dump();
  w.put_le<std::uint64_t>(text.size());
  w.put_bytes(text);
  return w;
}

inline void finish_container(ByteWriter& w) {
  const std::uint32_t crc = crc32_of(w.bytes());
  w.put_le<std::uint32_t>(crc);
}

/// Validates tag, version and checksum. On success returns the metadata and
/// leaves `body` positioned at the first payload array. The trailing CRC is
/// excluded from `body`.
inline nlohmann::json open_container(std::string_view tag, std::span<const std::uint8_t> bytes,
                                     std::span<const std::uint8_t>& body) {
  if (bytes.size() < 8 + 8 + 4) throw FormatError("container: file too short");
  if (std::memcmp(bytes.data(), tag.data(), 4) != 0)
    throw FormatError("container: bad magic, expected " + std::string(tag));
  if (bytes[5] != kContainerVersion)
    throw FormatError("container: unsupported version " + std::to_string(bytes[5]));
  if (bytes[4] != 0 || bytes[6] != 0 || bytes[7] != 0) throw FormatError("container: bad magic");

  const auto crc_pos = bytes.size() - 4;
  ByteReader tail(bytes.subspan(crc_pos));
  const auto stored = tail.get_le<std::uint32_t>();
  if (crc32_of(bytes.first(crc_pos)) != stored) throw FormatError("container: checksum mismatch");

  ByteReader r(bytes.first(crc_pos));
  r.get_string(8);
  const auto len = r.get_le<std::uint64_t>();
  if (len > r.remaining()) throw FormatError("container: metadata length exceeds file");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.get_string(static_cast<std::size_t>(len)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container: corrupt metadata: ") + e.what());
  }
  body = bytes.subspan(16 + static_cast<std::size_t>(len), crc_pos - 16 - static_cast<std::size_t>(len));
  return meta;
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace mlsl
