#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace stealth {

// Shortest representation that round-trips to the same double.
std::string format_double(double v);
// "f00" .. "f29"
std::string feature_label(std::size_t index);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j);
nlohmann::ordered_json read_json_file(const std::filesystem::path& path);

}  // namespace stealth
