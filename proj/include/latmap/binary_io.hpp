#pragma once

// Little-endian binary reader/writer shared by all file formats. The reader
// never returns partially decoded values: every read checks the remaining
// length first and throws with the offending offset.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latmap/error.hpp"

namespace latmap::io {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

class ByteWriter {
 public:
  void magic(std::string_view m) { raw(m.data(), m.size()); }

  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    raw(&value, sizeof(T));
  }

  void put_f32_array(std::span<const double> values) {
    for (double v : values) put(static_cast<float>(v));
  }

  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }

  const std::vector<std::uint8_t>& bytes() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string context)
      : data_(data), context_(std::move(context)) {}

  void expect_magic(std::string_view m) {
    need(m.size(), "magic");
    if (std::memcmp(data_.data() + pos_, m.data(), m.size()) != 0) {
      throw Error(ErrorKind::kFormat, context_ + ": bad magic at offset " + std::to_string(pos_) +
                                          " (expected \"" + std::string(m) + "\")");
    }
    pos_ += m.size();
  }

  template <typename T>
  T get(const char* what) {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  /// Reads n float32 values widened to double.
  std::vector<double> get_f32_array(std::size_t n, const char* what) {
    if (n > remaining() / sizeof(float)) fail_truncated(n * sizeof(float), what);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = get<float>(what);
    return out;
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void expect_end() const {
    if (remaining() != 0) {
      throw Error(ErrorKind::kFormat, context_ + ": " + std::to_string(remaining()) +
                                          " trailing bytes at offset " + std::to_string(pos_));
    }
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorKind::kFormat, context_ + ": " + msg + " at offset " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > remaining()) fail_truncated(n, what);
  }
  [[noreturn]] void fail_truncated(std::size_t n, const char* what) const {
    throw Error(ErrorKind::kFormat, context_ + ": truncated at offset " + std::to_string(pos_) +
                                        " reading " + what + " (need " + std::to_string(n) +
                                        " bytes, have " + std::to_string(remaining()) + ")");
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string context_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

}  // namespace latmap::io
