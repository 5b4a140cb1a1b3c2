#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "maskint/frame.hpp"

namespace maskint {

using Rgb = std::array<float, 3>;

enum class ShapeKind : std::uint8_t { kRectangle, kDisk };

// A solid shape translating linearly; (x, y) is its center in pixels at
// frame 0 and (vx, vy) its displacement per frame.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::kDisk;
  double x = 0, y = 0;
  double half_width = 4, half_height = 4;  // disks use half_width as radius
  double vx = 0, vy = 0;
  Rgb color{1.0f, 1.0f, 1.0f};
};

struct ClipSpec {
  std::size_t frames = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<ShapeSpec> shapes;
  // Rows below `horizon` use the second background color; 0 disables it.
  Rgb background{0.0f, 0.0f, 0.0f};
  Rgb background_low{0.0f, 0.0f, 0.0f};
  std::size_t horizon = 0;
  std::uint64_t seed = 0;

  // Throws SpecError when N < 2 or a shape leaves the canvas in any frame.
  void Validate() const;
};

// Draws a valid spec with `min_shapes`..`max_shapes` shapes from a fixed
// palette.
ClipSpec SampleClipSpec(std::uint64_t seed, std::size_t frames = 8, std::size_t height = 32,
                        std::size_t width = 32, std::size_t min_shapes = 1,
                        std::size_t max_shapes = 3);

// Rec. 601 luma in [0, 1]. Structure maps depend on pixels only through
// this function.
float Luminance(float r, float g, float b);

// Normalized Sobel gradient magnitude of luminance, clipped to [0, 1];
// responses below `threshold` are zeroed.
Frame ExtractEdges(const Frame& frame, float threshold = 0.1f);

// Pluggable structure condition. Edge maps are the only built-in kind.
class StructureExtractor {
 public:
  virtual ~StructureExtractor() = default;
  virtual Frame Extract(const Frame& frame) const = 0;
  virtual std::string name() const = 0;
};

class SobelEdgeExtractor final : public StructureExtractor {
 public:
  explicit SobelEdgeExtractor(float threshold = 0.1f) : threshold_(threshold) {}
  Frame Extract(const Frame& frame) const override { return ExtractEdges(frame, threshold_); }
  std::string name() const override { return "sobel-edges"; }

 private:
  float threshold_;
};

StructureMapSequence ExtractStructure(const VideoClip& clip, const StructureExtractor& extractor);

struct GeneratedClip {
  VideoClip video;
  StructureMapSequence structure;
};

Frame RenderFrame(const ClipSpec& spec, std::size_t n);

GeneratedClip GenerateClip(const ClipSpec& spec,
                           const StructureExtractor& extractor = SobelEdgeExtractor());

struct EditSpec {
  double hue_degrees = 0.0;
  bool luminance_preserving = true;
  // Pixels exactly equal to `from` are recolored toward `to` before rotation.
  std::optional<std::pair<Rgb, Rgb>> palette_swap;
};

// Per-pixel hue rotation around the luminance axis. With the default
// luminance-preserving flag, Luminance() of every output pixel equals that of
// the input pixel bit for bit, so ExtractEdges is unchanged.
Frame SynthEdit(const Frame& frame, const EditSpec& edit);
VideoClip SynthEdit(const VideoClip& clip, const EditSpec& edit);

// "MVID" clip container (structure maps use C = 1).
std::vector<std::uint8_t> SerializeClip(const VideoClip& clip);
VideoClip DeserializeClip(const std::vector<std::uint8_t>& bytes);
void SaveClip(const std::filesystem::path& path, const VideoClip& clip);
VideoClip LoadClip(const std::filesystem::path& path);

}  // namespace maskint
