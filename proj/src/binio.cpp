#include "selecmix/binio.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "selecmix/error.hpp"

namespace selecmix::binio {

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t basis) noexcept {
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint64_t h = basis;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

void Writer::u8(std::uint8_t v) { buf_.push_back(v); }

void Writer::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Writer::bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

const std::vector<std::uint8_t>& Writer::finish() {
  u64(fnv1a(buf_.data(), buf_.size()));
  return buf_;
}

void Writer::write_file(const std::filesystem::path& path) {
  finish();
  write_all(path, buf_.data(), buf_.size());
}

Reader::Reader(std::vector<std::uint8_t> bytes) : buf_(std::move(bytes)) {
  if (buf_.size() < 8) throw Error(ErrorKind::FormatError, "file shorter than checksum");
  payload_end_ = buf_.size() - 8;
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i)
    stored |= static_cast<std::uint64_t>(buf_[payload_end_ + i]) << (8 * i);
  if (stored != fnv1a(buf_.data(), payload_end_)) {
    throw Error(ErrorKind::FormatError, "checksum mismatch (truncated or corrupted file)");
  }
}

Reader Reader::from_file(const std::filesystem::path& path) { return Reader(read_all(path)); }

void Reader::need(std::size_t n) const {
  if (pos_ + n > payload_end_) throw Error(ErrorKind::FormatError, "unexpected end of payload");
}

std::uint8_t Reader::u8() {
  need(1);
  return buf_[pos_++];
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
  return v;
}

std::uint64_t Reader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
  return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::bytes(std::size_t n) {
  need(n);
  std::string s(buf_.begin() + static_cast<std::ptrdiff_t>(pos_),
                buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
  pos_ += n;
  return s;
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, const void* data, std::size_t len) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

}  // namespace selecmix::binio
