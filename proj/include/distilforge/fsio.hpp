#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace distilforge {

// Writes via a temp file in the same directory plus rename, so readers never
// observe a partial file.
void atomic_write_file(const std::filesystem::path& path, std::string_view bytes);

// Whole-file read; IoError with the path on failure.
std::string read_file_bytes(const std::filesystem::path& path);

}  // namespace distilforge
