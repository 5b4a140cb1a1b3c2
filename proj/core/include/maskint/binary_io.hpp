#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "maskint/errors.hpp"

namespace maskint::io {

// Little-endian byte sink.
class ByteWriter {
 public:
  void Bytes(std::string_view s) { buffer_.insert(buffer_.end(), s.begin(), s.end()); }
  void U8(std::uint8_t v) { buffer_.push_back(v); }
  void U16(std::uint16_t v) { Le(v, 2); }
  void U32(std::uint32_t v) { Le(v, 4); }
  void U64(std::uint64_t v) { Le(v, 8); }
  void F32(float v) { U32(std::bit_cast<std::uint32_t>(v)); }
  void Append(const std::vector<std::uint8_t>& bytes) {
    buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
  }

  const std::vector<std::uint8_t>& bytes() const { return buffer_; }
  std::size_t size() const { return buffer_.size(); }

 private:
  void Le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buffer_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buffer_;
};

// Little-endian byte source; throws FormatError on truncation.
class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size, std::string what)
      : data_(data), size_(size), what_(std::move(what)) {}
  explicit ByteReader(const std::vector<std::uint8_t>& bytes, std::string what = "file")
      : ByteReader(bytes.data(), bytes.size(), std::move(what)) {}

  std::string Bytes(std::size_t n) {
    Need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  void Expect(std::string_view magic) {
    if (Bytes(magic.size()) != magic) {
      throw FormatError(what_ + ": bad magic, expected \"" + std::string(magic) + "\"");
    }
  }
  std::uint8_t U8() { return static_cast<std::uint8_t>(Le(1)); }
  std::uint16_t U16() { return static_cast<std::uint16_t>(Le(2)); }
  std::uint32_t U32() { return static_cast<std::uint32_t>(Le(4)); }
  std::uint64_t U64() { return Le(8); }
  float F32() { return std::bit_cast<float>(U32()); }

  const std::uint8_t* cursor() const { return data_ + pos_; }
  void Skip(std::size_t n) {
    Need(n);
    pos_ += n;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }
  void ExpectEnd() const {
    if (pos_ != size_) throw FormatError(what_ + ": trailing bytes");
  }
  const std::string& what() const { return what_; }

 private:
  void Need(std::size_t n) const {
    if (size_ - pos_ < n) throw FormatError(what_ + ": truncated");
  }
  std::uint64_t Le(int n) {
    Need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<std::uint8_t> ReadFile(const std::filesystem::path& path);
void WriteFile(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace maskint::io
