#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "maskint/transformer.hpp"
#include "maskint/vq.hpp"

namespace maskint {

// "MCKP" model file. Layout (little endian):
//   magic "MCKP", u16 version
//   u32 length, model config as key=value text, u32 crc32 of the text
//   u32 tensor count, then per tensor:
//     u16 name length, name, u8 rank, u32 extents..., f32 values...,
//     u32 crc32 over name, rank, extents and values
//   u8 codebook count (0 or 2), then per codebook:
//     u32 length, MCBK bytes, u32 crc32
struct Checkpoint {
  ModelConfig config;
  ModelParameters<float> params;
  std::optional<Codebook> color;
  std::optional<Codebook> structure;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> SerializeCheckpoint(const Checkpoint& checkpoint);
// Throws FormatError on bad magic, truncation, CRC mismatch or tensors that do
// not match the stored config.
Checkpoint DeserializeCheckpoint(const std::vector<std::uint8_t>& bytes);
void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

std::uint32_t Crc32(const std::uint8_t* data, std::size_t size);

}  // namespace maskint
