#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace atfs::io {

// Writes to a sibling temp file, flushes, then renames over `path`, so a
// reader never sees a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

// Shortest text that reads back to the same double ("%.17g").
std::string format_double(double v);

}  // namespace atfs::io
