#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace necode {

using Bytes = std::vector<std::uint8_t>;

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                      std::uint64_t state = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);
std::uint64_t hash_doubles(std::span<const double> values,
                           std::uint64_t state = 0xcbf29ce484222325ULL);

/// Little-endian encoder for the binary containers.
class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> values);
  void raw(std::span<const std::uint8_t> bytes);
  void text(std::string_view s);  // u32 length + bytes
  /// Appends the FNV-1a checksum of everything written so far.
  void checksum_trailer();

  const Bytes& bytes() const { return buf_; }

 private:
  Bytes buf_;
};

/// Little-endian decoder; throws IoError on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::vector<double> f64s(std::size_t count);
  std::span<const std::uint8_t> raw(std::size_t count);
  std::string text();

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

/// Verifies the trailing checksum and returns the payload without it.
std::span<const std::uint8_t> verify_checksum_trailer(std::span<const std::uint8_t> bytes,
                                                      std::string_view what);

Bytes read_file(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace necode
