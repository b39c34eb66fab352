#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedstill/error.hpp"

namespace fedstill::io {

using Bytes = std::vector<std::uint8_t>;

std::uint32_t crc32(std::span<const std::uint8_t> data);

// Little-endian encoder.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }

  // Appends a CRC32 of everything written so far and hands the buffer over.
  Bytes finish_with_crc() &&;
  const Bytes& bytes() const noexcept { return buf_; }

 private:
  Bytes buf_;
};

// Little-endian decoder; every short read raises `error` (CorruptModel, ...).
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, ErrorCode error) : data_(data), error_(error) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string raw(std::size_t n);
  std::string str() { return raw(u32()); }

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

 private:
  void need(std::size_t n);

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  ErrorCode error_;
};

// Checks the trailing CRC32 and returns the payload without it.
std::span<const std::uint8_t> verify_crc(std::span<const std::uint8_t> data, ErrorCode error);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace fedstill::io
