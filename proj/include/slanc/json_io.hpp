#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace slanc::json_io {

// Pretty-prints `j` with every floating-point number at 17 significant
// digits ("%.17g"), which round-trips doubles exactly. Non-finite numbers
// are written as null.
std::string dump(const nlohmann::json& j, int indent = 2);

std::string format_double(double v);

// Writes to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

std::string read_file(const std::filesystem::path& path);

} // namespace slanc::json_io
