#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "collabod/tensor.hpp"

// CTEN tensor container: "CTEN", version byte (1), dtype byte (0 = f32),
// rank byte, rank x u32 little-endian extents, little-endian f32 payload.
namespace collabod::cten {

inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

void write(std::ostream& out, const Tensor& t);
// Accepts rank 1..4; lower ranks are padded with leading unit extents.
Tensor read(std::istream& in);

std::vector<std::uint8_t> encode(const Tensor& t);
Tensor decode(const std::vector<std::uint8_t>& bytes);

void save(const std::filesystem::path& path, const Tensor& t);
Tensor load(const std::filesystem::path& path);

}  // namespace collabod::cten
