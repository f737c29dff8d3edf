#pragma once

// "AHD1" trained-head container:
//
//   magic "AHD1" | kind u8 (0 = mlp, 1 = cnn) |
//   per parameter tensor, in Head::parameters() order:
//     rank u32 | rank x extent u32 | product(extents) x f32
//
// All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "clipdetect/heads.hpp"

namespace clipdetect {

std::vector<std::uint8_t> encode_head(const Head& head);
Head decode_head(std::span<const std::uint8_t> bytes);

void save_head(const Head& head, const std::filesystem::path& path);
Head load_head(const std::filesystem::path& path);

}  // namespace clipdetect
