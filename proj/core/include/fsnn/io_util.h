#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fsnn {

// Whole-file read; throws ValidationError naming the path on failure.
std::vector<std::uint8_t> read_file_bytes(const std::string& path);
std::string read_file_text(const std::string& path);

// Writes via a temporary file in the same directory followed by an atomic
// rename, so readers never observe a partially written file.
void atomic_write_file(const std::string& path, const void* data,
                       std::size_t size);
void atomic_write_text(const std::string& path, const std::string& text);

}  // namespace fsnn
