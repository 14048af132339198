#include "fsnn/io_util.h"

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <system_error>

#include "fsnn/error.h"

namespace fsnn {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  if (size > 0 &&
      !in.read(reinterpret_cast<char*>(bytes.data()), size)) {
    throw ValidationError("cannot read file: " + path);
  }
  return bytes;
}

std::string read_file_text(const std::string& path) {
  auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void atomic_write_file(const std::string& path, const void* data,
                       std::size_t size) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path dir = target.parent_path().empty() ? fs::path(".")
                                                    : target.parent_path();
  std::error_code ec;
  fs::create_directories(dir, ec);  // best effort; open failure reports below
  const fs::path tmp = dir / (target.filename().string() + ".tmp" +
                              std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot create file: " + tmp.string());
    if (size > 0) out.write(static_cast<const char*>(data),
                            static_cast<std::streamsize>(size));
    out.flush();
    if (!out) {
      fs::remove(tmp, ec);
      throw ValidationError("cannot write file: " + tmp.string());
    }
  }
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw ValidationError("cannot move temporary file into place: " + path);
  }
}

void atomic_write_text(const std::string& path, const std::string& text) {
  atomic_write_file(path, text.data(), text.size());
}

}  // namespace fsnn
