#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace selecmix::binio {

/// 64-bit FNV-1a over a byte range.
std::uint64_t fnv1a(const void* data, std::size_t len,
                    std::uint64_t basis = 0xCBF29CE484222325ULL) noexcept;

/// Accumulates little-endian fields in memory. finish() appends the FNV-1a
/// checksum of everything written so far.
class Writer {
 public:
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void bytes(std::string_view s);

  const std::vector<std::uint8_t>& finish();
  void write_file(const std::filesystem::path& path);

 private:
  std::vector<std::uint8_t> buf_;
};

/// Reads fields written by Writer. The checksum is verified on
/// construction; every read past the payload throws FormatError.
class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> bytes);
  static Reader from_file(const std::filesystem::path& path);

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string bytes(std::size_t n);

  bool at_end() const noexcept { return pos_ == payload_end_; }

 private:
  void need(std::size_t n) const;

  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::size_t payload_end_ = 0;
};

std::vector<std::uint8_t> read_all(const std::filesystem::path& path);
void write_all(const std::filesystem::path& path, const void* data, std::size_t len);

}  // namespace selecmix::binio
