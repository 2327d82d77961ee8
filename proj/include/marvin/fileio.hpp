#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace marvin {

/// Throws IoError with the path in the message.
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over `path`, so readers never
/// observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace marvin
