#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "maskint/frame.hpp"

namespace maskint {

inline constexpr double kPsnrCap = 99.0;

// 10 log10(1 / MSE) on the [0, 1] scale; identical frames give kPsnrCap.
double Psnr(const Frame& a, const Frame& b);

struct SsimOptions {
  std::size_t window = 8;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

// Mean SSIM over every window position (stride 1) and channel, uniform
// weights.
double Ssim(const Frame& a, const Frame& b, const SsimOptions& options = {});

// 8 x 8 mean-pooled luminance of a frame, row major.
std::vector<double> PooledLuminance(const Frame& frame, std::size_t grid = 8);

// Mean cosine similarity of consecutive frames' pooled luminance descriptors.
// This is a pixel-space proxy and not an embedding-based score.
double TemporalConsistency(const VideoClip& clip);

// Per-frame blend (1 - a) * first + a * last, a = n / (N - 1).
VideoClip LinearBlend(const Frame& first, const Frame& last, std::size_t frames);

struct ClipMetrics {
  std::string name;
  double psnr = 0.0;  // mean over the compared frames
  double ssim = 0.0;
  double temporal_consistency = 0.0;
};

// Compares `output` with `reference` on the given frames (all when empty).
ClipMetrics EvaluateClip(const std::string& name, const VideoClip& output,
                         const VideoClip& reference, std::span<const std::size_t> frames = {});

// CSV: clip,psnr,ssim,temporal_consistency
std::string MetricsCsv(std::span<const ClipMetrics> rows);

}  // namespace maskint
