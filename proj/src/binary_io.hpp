#pragma once

// Little-endian byte packing shared by the RIV1 / ADP1 / DSC1 / CKP1 formats.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "rivlpr/common.hpp"

namespace rivlpr {

class ByteWriter {
 public:
  void magic(const char (&tag)[5]) { raw(tag, 4); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void f32s(std::span<const float> v) { raw(v.data(), v.size_bytes()); }
  void f64s(std::span<const double> v) { raw(v.data(), v.size_bytes()); }
  void bytes(std::span<const std::uint8_t> v) { raw(v.data(), v.size()); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string format) : bytes_(bytes), format_(std::move(format)) {}

  void magic(const char (&tag)[5]) {
    char got[4];
    raw(got, 4);
    if (std::memcmp(got, tag, 4) != 0) fail(ErrorCode::kFormat, format_ + ": bad magic");
  }
  std::uint32_t u32() { std::uint32_t v; raw(&v, sizeof v); return v; }
  std::uint64_t u64() { std::uint64_t v; raw(&v, sizeof v); return v; }
  double f64() { double v; raw(&v, sizeof v); return v; }
  void f32s(std::span<float> out) { raw(out.data(), out.size_bytes()); }
  void f64s(std::span<double> out) { raw(out.data(), out.size_bytes()); }
  void bytes(std::span<std::uint8_t> out) { raw(out.data(), out.size()); }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > remaining()) fail(ErrorCode::kFormat, format_ + ": truncated string");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void finish() const {
    if (pos_ != bytes_.size()) fail(ErrorCode::kFormat, format_ + ": trailing bytes");
  }

 private:
  void raw(void* p, std::size_t n) {
    if (n > remaining()) fail(ErrorCode::kFormat, format_ + ": truncated file");
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string format_;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace rivlpr
