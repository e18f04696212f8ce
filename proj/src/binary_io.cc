#include "wildlab/binary_io.h"

#include <fstream>
#include <iterator>

#include "wildlab/errors.h"

namespace wildlab {

void ByteReader::bytes(void* out, size_t n) {
  require(n);
  std::memcpy(out, data_.data() + pos_, n);
  pos_ += n;
}

void ByteReader::require(size_t n) const {
  if (remaining() < n) {
    throw FormatError(format_ + ": truncated file at byte " + std::to_string(pos_));
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace wildlab
