#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "maskint/binary_io.hpp"
#include "maskint/frame.hpp"

namespace maskint {

enum class Channel : std::uint8_t { kColor = 0, kStructure = 1 };

const char* ChannelName(Channel c);

// N x h x w codebook indices with a parallel mask flag per position. A masked
// position stores the mask id, which is one past the last vocabulary entry.
struct TokenGrid {
  Channel channel = Channel::kColor;
  std::size_t frames = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t vocab = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> masked;

  // A grid with every position masked.
  static TokenGrid AllMasked(Channel channel, std::size_t frames, std::size_t rows,
                             std::size_t cols, std::size_t vocab);

  std::size_t size() const { return ids.size(); }
  std::size_t per_frame() const { return rows * cols; }
  std::size_t index(std::size_t n, std::size_t i, std::size_t j) const {
    return (n * rows + i) * cols + j;
  }
  std::int32_t mask_id() const { return static_cast<std::int32_t>(vocab); }
  std::size_t masked_count() const;
  bool is_masked(std::size_t pos) const { return masked[pos] != 0; }

  void Set(std::size_t pos, std::int32_t id);
  void Mask(std::size_t pos);

  // Tokens of frames [first, first + count).
  TokenGrid Slice(std::size_t first, std::size_t count) const;

  // Throws unless ids/mask sizes match and unmasked ids are in [0, vocab).
  void Validate() const;

  friend bool operator==(const TokenGrid&, const TokenGrid&) = default;
};

struct CodebookFitStats {
  std::size_t iterations = 0;
  std::vector<double> inertia_history;  // one value per assignment pass
  double inertia = 0.0;                 // of the final entries
};

// M patch vectors of dimension patch_rows * patch_cols * channels.
struct Codebook {
  Channel channel = Channel::kColor;
  std::size_t patch_rows = 4;
  std::size_t patch_cols = 4;
  std::size_t channels = 3;
  std::size_t size = 0;
  std::vector<float> entries;
  CodebookFitStats stats;

  std::size_t dim() const { return patch_rows * patch_cols * channels; }
  std::span<const float> entry(std::size_t k) const {
    return {entries.data() + k * dim(), dim()};
  }

  // Index of the nearest entry in Euclidean distance; ties go to the lowest
  // index.
  std::int32_t Nearest(std::span<const float> patch) const;

  void Validate() const;
};

struct CodebookSpec {
  Channel channel = Channel::kColor;
  std::size_t patch_rows = 4;
  std::size_t patch_cols = 4;
  std::size_t channels = 3;
  std::size_t size = 64;
  std::size_t max_iters = 50;
  std::uint64_t seed = 0;
};

// Lloyd's k-means with k-means++ seeding over `patches` (count x dim, row
// major). Throws CapacityError when fewer than M distinct patches exist.
Codebook FitCodebook(std::span<const float> patches, const CodebookSpec& spec);

// Sum of squared distances from each patch to its nearest entry.
double Inertia(std::span<const float> patches, const Codebook& codebook);

// Non-overlapping patches of a frame in raster order of the patch grid; each
// patch is laid out (py, px, c).
std::vector<float> ExtractPatches(const Frame& frame, std::size_t patch_rows,
                                  std::size_t patch_cols);

// Patches of every frame of every clip, in order.
std::vector<float> ExtractPatches(std::span<const VideoClip> clips, std::size_t patch_rows,
                                  std::size_t patch_cols);

TokenGrid Encode(const Frame& frame, const Codebook& codebook);
TokenGrid Encode(const VideoClip& clip, const Codebook& codebook);

// Tiling of centroid patches. Throws ContractError on masked positions.
Frame Decode(const TokenGrid& tokens, const Codebook& codebook, std::size_t frame = 0);
VideoClip DecodeClip(const TokenGrid& tokens, const Codebook& codebook);

// "MTOK" token container.
std::vector<std::uint8_t> SerializeTokens(const TokenGrid& grid);
TokenGrid DeserializeTokens(const std::vector<std::uint8_t>& bytes);
void SaveTokens(const std::filesystem::path& path, const TokenGrid& grid);
TokenGrid LoadTokens(const std::filesystem::path& path);

// "MCBK" codebook file.
std::vector<std::uint8_t> SerializeCodebook(const Codebook& codebook);
Codebook DeserializeCodebook(io::ByteReader& reader);
void SaveCodebook(const std::filesystem::path& path, const Codebook& codebook);
Codebook LoadCodebook(const std::filesystem::path& path);

}  // namespace maskint
