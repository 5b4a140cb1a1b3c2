#include "maskint/synthetic.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <vector>

#include "maskint/binary_io.hpp"
#include "maskint/rng.hpp"

namespace maskint {
namespace {

constexpr std::uint16_t kClipVersion = 1;

constexpr std::array<Rgb, 6> kPalette{{
    {0.90f, 0.15f, 0.15f},
    {0.15f, 0.75f, 0.20f},
    {0.20f, 0.30f, 0.90f},
    {0.95f, 0.85f, 0.10f},
    {0.85f, 0.30f, 0.85f},
    {0.95f, 0.95f, 0.95f},
}};

constexpr std::array<Rgb, 4> kBackgrounds{{
    {0.05f, 0.05f, 0.08f},
    {0.10f, 0.20f, 0.35f},
    {0.30f, 0.22f, 0.12f},
    {0.45f, 0.45f, 0.45f},
}};

constexpr float kMinContrast = 0.2f;

bool Covers(const ShapeSpec& s, double cx, double cy, double px, double py) {
  if (s.kind == ShapeKind::kDisk) {
    const double dx = px - cx, dy = py - cy;
    return dx * dx + dy * dy <= s.half_width * s.half_width;
  }
  return std::abs(px - cx) <= s.half_width && std::abs(py - cy) <= s.half_height;
}

double Extent(const ShapeSpec& s, bool vertical) {
  if (s.kind == ShapeKind::kDisk) return s.half_width;
  return vertical ? s.half_height : s.half_width;
}

// Unit normal of the constant-luminance plane.
std::array<double, 3> LumaAxis() {
  const double w[3] = {0.299, 0.587, 0.114};
  const double norm = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
  return {w[0] / norm, w[1] / norm, w[2] / norm};
}

// Rodrigues rotation of v about the unit axis k.
std::array<double, 3> Rotate(const std::array<double, 3>& v, const std::array<double, 3>& k,
                             double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double kv = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
  const std::array<double, 3> cross{k[1] * v[2] - k[2] * v[1], k[2] * v[0] - k[0] * v[2],
                                    k[0] * v[1] - k[1] * v[0]};
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) out[i] = v[i] * c + cross[i] * s + k[i] * kv * (1.0 - c);
  return out;
}

// Smallest float g in [0, 1] with Luminance(r, g, b) >= target, if any float
// in that range reproduces target exactly. Green carries the largest luma
// weight, so it absorbs the rounding with the smallest color change.
std::optional<float> SolveGreen(float r, float b, float target) {
  if (Luminance(r, 0.0f, b) > target || Luminance(r, 1.0f, b) < target) return std::nullopt;
  std::uint32_t lo = std::bit_cast<std::uint32_t>(0.0f);
  std::uint32_t hi = std::bit_cast<std::uint32_t>(1.0f);
  while (lo < hi) {
    const std::uint32_t mid = lo + (hi - lo) / 2;
    if (Luminance(r, std::bit_cast<float>(mid), b) < target) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  const float g = std::bit_cast<float>(lo);
  if (Luminance(r, g, b) != target) return std::nullopt;
  return g;
}

// Moves (r, g, b) toward `proposal` while keeping the luminance of the
// original pixel exactly; returns the original when that is impossible.
Rgb MatchLuminance(const Rgb& original, std::array<double, 3> proposal) {
  const float y = Luminance(original[0], original[1], original[2]);
  // Pull the proposal toward gray until it lies inside the unit cube.
  double scale = 1.0;
  for (int i = 0; i < 3; ++i) {
    const double d = proposal[i] - y;
    if (proposal[i] > 1.0 && d > 0) scale = std::min(scale, (1.0 - y) / d);
    if (proposal[i] < 0.0 && d < 0) scale = std::min(scale, -y / d);
  }
  for (double& v : proposal) v = std::clamp(y + (v - y) * scale, 0.0, 1.0);
  const float r = static_cast<float>(proposal[0]);
  const float b = static_cast<float>(proposal[2]);
  if (auto g = SolveGreen(r, b, y)) return {r, *g, b};
  return original;
}

}  // namespace

void ClipSpec::Validate() const {
  if (frames < 2) throw SpecError("clip needs at least 2 frames");
  if (height == 0 || width == 0) throw SpecError("clip canvas must be non-empty");
  for (std::size_t si = 0; si < shapes.size(); ++si) {
    const ShapeSpec& s = shapes[si];
    if (s.half_width <= 0 || (s.kind == ShapeKind::kRectangle && s.half_height <= 0)) {
      throw SpecError("shape " + std::to_string(si) + " has a non-positive size");
    }
    const double ex = Extent(s, false), ey = Extent(s, true);
    for (std::size_t n = 0; n < frames; ++n) {
      const double cx = s.x + s.vx * static_cast<double>(n);
      const double cy = s.y + s.vy * static_cast<double>(n);
      if (cx - ex < 0 || cy - ey < 0 || cx + ex > static_cast<double>(width) ||
          cy + ey > static_cast<double>(height)) {
        throw SpecError("shape " + std::to_string(si) + " leaves the canvas at frame " +
                        std::to_string(n));
      }
    }
  }
}

ClipSpec SampleClipSpec(std::uint64_t seed, std::size_t frames, std::size_t height,
                        std::size_t width, std::size_t min_shapes, std::size_t max_shapes) {
  Rng rng = Rng(seed).Split("clip-spec");
  ClipSpec spec;
  spec.frames = frames;
  spec.height = height;
  spec.width = width;
  spec.seed = seed;
  spec.background = kBackgrounds[rng.Below(kBackgrounds.size())];
  if (rng.Uniform() < 0.5) {
    spec.background_low = kBackgrounds[rng.Below(kBackgrounds.size())];
    // on a 4-pixel boundary so the split never falls inside a patch
    spec.horizon = (height / 2 + rng.Below(height / 4 + 1)) / 4 * 4;
  } else {
    spec.background_low = spec.background;
  }
  // Shape colors stand out from both background tones by kMinContrast in
  // luminance, so every outline survives the default edge threshold.
  std::vector<Rgb> visible;
  for (const Rgb& c : kPalette) {
    const float y = Luminance(c[0], c[1], c[2]);
    const float top = Luminance(spec.background[0], spec.background[1], spec.background[2]);
    const float low =
        Luminance(spec.background_low[0], spec.background_low[1], spec.background_low[2]);
    if (std::abs(y - top) >= kMinContrast && std::abs(y - low) >= kMinContrast) {
      visible.push_back(c);
    }
  }
  const std::size_t count = min_shapes + rng.Below(max_shapes - min_shapes + 1);
  const double span = static_cast<double>(frames - 1);
  for (std::size_t i = 0; i < count; ++i) {
    ShapeSpec s;
    s.kind = rng.Uniform() < 0.5 ? ShapeKind::kDisk : ShapeKind::kRectangle;
    const double min_side = static_cast<double>(std::min(height, width));
    s.half_width = std::round(min_side * (0.12 + 0.10 * rng.Uniform()));
    s.half_height = s.kind == ShapeKind::kDisk
                        ? s.half_width
                        : std::round(min_side * (0.12 + 0.10 * rng.Uniform()));
    s.color = visible[rng.Below(visible.size())];
    // Nonzero integer velocities of up to 3 px/frame; after 8 misfits the
    // shape stands still.
    for (int attempt = 0;; ++attempt) {
      const int limit = attempt < 8 ? 3 : 0;
      s.vx = static_cast<double>(static_cast<int>(rng.Below(2 * limit + 1)) - limit);
      s.vy = static_cast<double>(static_cast<int>(rng.Below(2 * limit + 1)) - limit);
      if (limit > 0 && s.vx == 0 && s.vy == 0) continue;
      const double ex = Extent(s, false), ey = Extent(s, true);
      const double x_lo = ex - std::min(0.0, s.vx * span);
      const double x_hi = static_cast<double>(width) - ex - std::max(0.0, s.vx * span);
      const double y_lo = ey - std::min(0.0, s.vy * span);
      const double y_hi = static_cast<double>(height) - ey - std::max(0.0, s.vy * span);
      if (x_lo > x_hi || y_lo > y_hi) continue;
      s.x = std::floor(x_lo + rng.Uniform() * (x_hi - x_lo));
      s.y = std::floor(y_lo + rng.Uniform() * (y_hi - y_lo));
      s.x = std::clamp(s.x, std::ceil(x_lo), std::floor(x_hi));
      s.y = std::clamp(s.y, std::ceil(y_lo), std::floor(y_hi));
      break;
    }
    spec.shapes.push_back(s);
  }
  spec.Validate();
  return spec;
}

float Luminance(float r, float g, float b) {
  return static_cast<float>(0.299 * static_cast<double>(r) + 0.587 * static_cast<double>(g) +
                            0.114 * static_cast<double>(b));
}

Frame ExtractEdges(const Frame& frame, float threshold) {
  if (frame.channels != 3 && frame.channels != 1) {
    throw GeometryError("extract_edges: expected 1 or 3 channels");
  }
  const std::size_t h = frame.height, w = frame.width;
  std::vector<double> luma(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    const float* p = &frame.pixels[i * frame.channels];
    luma[i] = frame.channels == 3 ? Luminance(p[0], p[1], p[2]) : p[0];
  }
  auto at = [&](long y, long x) {
    y = std::clamp(y, 0L, static_cast<long>(h) - 1);
    x = std::clamp(x, 0L, static_cast<long>(w) - 1);
    return luma[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  };
  const double norm = 4.0 * std::numbers::sqrt2;
  Frame out(h, w, 1);
  for (long y = 0; y < static_cast<long>(h); ++y) {
    for (long x = 0; x < static_cast<long>(w); ++x) {
      const double gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
      const double gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
      float m = static_cast<float>(std::clamp(std::sqrt(gx * gx + gy * gy) / norm, 0.0, 1.0));
      if (m < threshold) m = 0.0f;
      out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = m;
    }
  }
  return out;
}

StructureMapSequence ExtractStructure(const VideoClip& clip, const StructureExtractor& extractor) {
  StructureMapSequence maps;
  for (const Frame& f : clip.frames) maps.frames.push_back(extractor.Extract(f));
  return maps;
}

Frame RenderFrame(const ClipSpec& spec, std::size_t n) {
  Frame f(spec.height, spec.width, 3);
  for (std::size_t y = 0; y < spec.height; ++y) {
    const Rgb& bg = (spec.horizon > 0 && y >= spec.horizon) ? spec.background_low : spec.background;
    for (std::size_t x = 0; x < spec.width; ++x) {
      Rgb c = bg;
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      for (const ShapeSpec& s : spec.shapes) {
        const double cx = s.x + s.vx * static_cast<double>(n);
        const double cy = s.y + s.vy * static_cast<double>(n);
        if (Covers(s, cx, cy, px, py)) c = s.color;
      }
      for (std::size_t k = 0; k < 3; ++k) f.at(y, x, k) = c[k];
    }
  }
  return f;
}

GeneratedClip GenerateClip(const ClipSpec& spec, const StructureExtractor& extractor) {
  spec.Validate();
  GeneratedClip out;
  for (std::size_t n = 0; n < spec.frames; ++n) out.video.frames.push_back(RenderFrame(spec, n));
  out.structure = ExtractStructure(out.video, extractor);
  return out;
}

Frame SynthEdit(const Frame& frame, const EditSpec& edit) {
  if (frame.channels != 3) throw GeometryError("synth_edit: expected an RGB frame");
  const double angle = edit.hue_degrees * std::numbers::pi / 180.0;
  const bool rotate = std::fmod(edit.hue_degrees, 360.0) != 0.0;
  const std::array<double, 3> luma_axis = LumaAxis();
  const double s3 = 1.0 / std::sqrt(3.0);
  const std::array<double, 3> gray_axis{s3, s3, s3};
  Frame out = frame;
  for (std::size_t i = 0; i < frame.height * frame.width; ++i) {
    float* p = &out.pixels[i * 3];
    Rgb px{p[0], p[1], p[2]};
    if (edit.palette_swap && px == edit.palette_swap->first) {
      const Rgb& to = edit.palette_swap->second;
      px = edit.luminance_preserving ? MatchLuminance(px, {to[0], to[1], to[2]}) : to;
    }
    if (rotate) {
      if (edit.luminance_preserving) {
        const double y = Luminance(px[0], px[1], px[2]);
        const std::array<double, 3> chroma{px[0] - y, px[1] - y, px[2] - y};
        const auto turned = Rotate(chroma, luma_axis, angle);
        px = MatchLuminance(px, {y + turned[0], y + turned[1], y + turned[2]});
      } else {
        const double mean = (px[0] + px[1] + px[2]) / 3.0;
        const std::array<double, 3> chroma{px[0] - mean, px[1] - mean, px[2] - mean};
        const auto turned = Rotate(chroma, gray_axis, angle);
        for (int k = 0; k < 3; ++k) {
          px[k] = static_cast<float>(std::clamp(mean + turned[k], 0.0, 1.0));
        }
      }
    }
    p[0] = px[0];
    p[1] = px[1];
    p[2] = px[2];
  }
  return out;
}

VideoClip SynthEdit(const VideoClip& clip, const EditSpec& edit) {
  VideoClip out;
  for (const Frame& f : clip.frames) out.frames.push_back(SynthEdit(f, edit));
  return out;
}

std::vector<std::uint8_t> SerializeClip(const VideoClip& clip) {
  clip.Validate();
  const Frame& first = clip.frames.front();
  io::ByteWriter w;
  w.Bytes("MVID");
  w.U16(kClipVersion);
  w.U32(static_cast<std::uint32_t>(clip.size()));
  w.U32(static_cast<std::uint32_t>(first.height));
  w.U32(static_cast<std::uint32_t>(first.width));
  w.U32(static_cast<std::uint32_t>(first.channels));
  for (const Frame& f : clip.frames) {
    for (float v : f.pixels) w.F32(v);
  }
  return w.bytes();
}

VideoClip DeserializeClip(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "clip file");
  r.Expect("MVID");
  if (r.U16() != kClipVersion) throw FormatError("clip file: unsupported version");
  const std::size_t n = r.U32(), h = r.U32(), w = r.U32(), c = r.U32();
  if (n == 0 || h == 0 || w == 0 || c == 0) throw FormatError("clip file: zero extent");
  if (r.remaining() != n * h * w * c * 4) throw FormatError("clip file: size mismatch");
  VideoClip clip;
  for (std::size_t i = 0; i < n; ++i) {
    Frame f(h, w, c);
    for (float& v : f.pixels) v = r.F32();
    clip.frames.push_back(std::move(f));
  }
  return clip;
}

void SaveClip(const std::filesystem::path& path, const VideoClip& clip) {
  io::WriteFile(path, SerializeClip(clip));
}

VideoClip LoadClip(const std::filesystem::path& path) {
  return DeserializeClip(io::ReadFile(path));
}

}  // namespace maskint
