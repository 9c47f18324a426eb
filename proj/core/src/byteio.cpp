#include "byteio.hpp"

#include <fstream>
#include <iterator>

namespace halo::detail {

std::vector<std::uint8_t> read_binary_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(std::string("cannot open ") + what + " " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_binary_file(const std::string& path, std::span<const std::uint8_t> bytes, const char* what) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(std::string("cannot write ") + what + " " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(std::string("failed writing ") + what + " " + path);
}

}  // namespace halo::detail
