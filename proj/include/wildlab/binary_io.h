#ifndef WILDLAB_BINARY_IO_H_
#define WILDLAB_BINARY_IO_H_

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

namespace wildlab {

// Little-endian byte stream helpers shared by the WDS1 and WNN1 codecs.
class ByteWriter {
 public:
  void bytes(const void* data, size_t n) { buf_.append(static_cast<const char*>(data), n); }
  void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(uint32_t v) { put_le(v); }
  void i32(int32_t v) { put_le(static_cast<uint32_t>(v)); }
  void u64(uint64_t v) { put_le(v); }
  void f32(float v) { put_le(std::bit_cast<uint32_t>(v)); }
  void f64(double v) { put_le(std::bit_cast<uint64_t>(v)); }

  std::string take() { return std::move(buf_); }

 private:
  template <typename U>
  void put_le(U v) {
    for (size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  std::string buf_;
};

// Throws FormatError("<format>: truncated ...") on short reads.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string format) : data_(data), format_(std::move(format)) {}

  void bytes(void* out, size_t n);
  uint8_t u8() { return static_cast<uint8_t>(get_le<uint8_t>()); }
  uint32_t u32() { return get_le<uint32_t>(); }
  int32_t i32() { return static_cast<int32_t>(get_le<uint32_t>()); }
  uint64_t u64() { return get_le<uint64_t>(); }
  float f32() { return std::bit_cast<float>(get_le<uint32_t>()); }
  double f64() { return std::bit_cast<double>(get_le<uint64_t>()); }

  size_t remaining() const { return data_.size() - pos_; }

 private:
  template <typename U>
  U get_le() {
    require(sizeof(U));
    U v = 0;
    for (size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i));
    }
    pos_ += sizeof(U);
    return v;
  }
  void require(size_t n) const;

  std::string_view data_;
  size_t pos_ = 0;
  std::string format_;
};

std::string read_file(const std::filesystem::path& path);
// Writes to a temporary sibling then renames, so readers never observe a
// half-written file.
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace wildlab

#endif  // WILDLAB_BINARY_IO_H_
