#pragma once

#include <filesystem>
#include <string>

namespace bv {

// Writes `bytes` to path + ".tmp", then renames it over `path`.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);

std::string read_file(const std::filesystem::path& path);

}  // namespace bv
