#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "maskint/errors.hpp"

namespace maskint {

// One image, interleaved row-major: pixels[(y * width + x) * channels + c].
struct Frame {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;

  Frame() = default;
  Frame(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  float at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }

  bool SameGeometry(const Frame& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }

  friend bool operator==(const Frame&, const Frame&) = default;
};

// N frames of identical geometry.
struct VideoClip {
  std::vector<Frame> frames;

  std::size_t size() const { return frames.size(); }
  const Frame& operator[](std::size_t i) const { return frames[i]; }
  Frame& operator[](std::size_t i) { return frames[i]; }

  void Validate() const {
    if (frames.empty()) throw GeometryError("clip has no frames");
    for (const Frame& f : frames) {
      if (!f.SameGeometry(frames.front())) throw GeometryError("clip frames differ in geometry");
      if (f.pixels.size() != f.height * f.width * f.channels) {
        throw GeometryError("frame pixel count does not match its geometry");
      }
    }
  }

  friend bool operator==(const VideoClip&, const VideoClip&) = default;
};

// Per-frame structure maps: a clip whose frames have one channel in [0, 1].
using StructureMapSequence = VideoClip;

}  // namespace maskint
