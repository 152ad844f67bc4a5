#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>

namespace wkpnet {

/// Writes through a sibling temporary file and renames it into place, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer);

std::string read_text_file(const std::filesystem::path& path);

/// Runs body(i) for i in [0, count) on up to `jobs` threads. Work items must be
/// independent; results are written by index so the outcome does not depend on jobs.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& body);

}  // namespace wkpnet
