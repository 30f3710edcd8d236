#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "milforge/models.hpp"

namespace milforge::mil {

// Checkpoint file:
//   "MILC" | version u16 | variant u8 | reserved u8 | d_in u32 | n_classes u32
//   | hidden u32 | attn_width u32 | seed u64 | tensor count u32
//   | per tensor: name_len u16 | name | rows u32 | cols u32
//                 | payload rows*cols f64 little-endian row-major | CRC32(payload) u32
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  MilModelParams params;
  std::uint64_t seed = 0;
};

std::vector<std::uint8_t> encode_checkpoint(const MilModelParams& params, std::uint64_t seed);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const MilModelParams& params, std::uint64_t seed,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace milforge::mil
