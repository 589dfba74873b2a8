#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string_view>

#include "stealth/mlp.hpp"

namespace stealth {

// Weight file layout (all integers u32 little-endian, all floats f64 little-endian):
//   magic "STLTHMLP" (8 bytes) | version | layer_count
//   per layer: in | out | activation tag
//   per layer: weights (in*out, row-major) then bias (out)
inline constexpr std::string_view kWeightMagic = "STLTHMLP";
inline constexpr std::uint32_t kWeightFormatVersion = 1;

void write_mlp(std::ostream& os, const Mlp& net);
Mlp read_mlp(std::istream& is);

void save_mlp(const std::filesystem::path& path, const Mlp& net);
Mlp load_mlp(const std::filesystem::path& path);

}  // namespace stealth
