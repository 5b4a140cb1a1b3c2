#include "maskint/metrics.hpp"

#include <cmath>
#include <sstream>

#include "maskint/errors.hpp"
#include "maskint/synthetic.hpp"

namespace maskint {

namespace {

void RequireSameGeometry(const Frame& a, const Frame& b, const char* what) {
  if (!a.SameGeometry(b) || a.pixels.size() != b.pixels.size()) {
    throw GeometryError(std::string(what) + ": frame geometries differ");
  }
}

}  // namespace

double Psnr(const Frame& a, const Frame& b) {
  RequireSameGeometry(a, b, "psnr");
  if (a.pixels.empty()) throw GeometryError("psnr: empty frames");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    sum += d * d;
  }
  if (sum == 0.0) return kPsnrCap;
  const double mse = sum / static_cast<double>(a.pixels.size());
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double Ssim(const Frame& a, const Frame& b, const SsimOptions& options) {
  RequireSameGeometry(a, b, "ssim");
  const std::size_t win = options.window;
  if (win == 0 || a.height < win || a.width < win) {
    throw GeometryError("ssim: frames smaller than the " + std::to_string(win) + "x" +
                        std::to_string(win) + " window");
  }
  const double n = static_cast<double>(win * win);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    for (std::size_t y0 = 0; y0 + win <= a.height; ++y0) {
      for (std::size_t x0 = 0; x0 + win <= a.width; ++x0) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t y = y0; y < y0 + win; ++y) {
          for (std::size_t x = x0; x < x0 + win; ++x) {
            const double va = a.at(y, x, c);
            const double vb = b.at(y, x, c);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        }
        const double ma = sa / n, mb = sb / n;
        const double va = saa / n - ma * ma;
        const double vb = sbb / n - mb * mb;
        const double cov = sab / n - ma * mb;
        total += ((2 * ma * mb + options.c1) * (2 * cov + options.c2)) /
                 ((ma * ma + mb * mb + options.c1) * (va + vb + options.c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

std::vector<double> PooledLuminance(const Frame& frame, std::size_t grid) {
  if (frame.height < grid || frame.width < grid) {
    throw GeometryError("pooled luminance: frame smaller than the pooling grid");
  }
  if (frame.channels != 1 && frame.channels != 3) {
    throw GeometryError("pooled luminance: expected 1 or 3 channels");
  }
  std::vector<double> out(grid * grid, 0.0);
  for (std::size_t gy = 0; gy < grid; ++gy) {
    const std::size_t y0 = gy * frame.height / grid, y1 = (gy + 1) * frame.height / grid;
    for (std::size_t gx = 0; gx < grid; ++gx) {
      const std::size_t x0 = gx * frame.width / grid, x1 = (gx + 1) * frame.width / grid;
      double sum = 0.0;
      for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = x0; x < x1; ++x) {
          sum += frame.channels == 1
                     ? frame.at(y, x)
                     : Luminance(frame.at(y, x, 0), frame.at(y, x, 1), frame.at(y, x, 2));
        }
      }
      out[gy * grid + gx] = sum / static_cast<double>((y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

double TemporalConsistency(const VideoClip& clip) {
  if (clip.size() < 2) throw ContractError("temporal consistency: needs at least 2 frames");
  clip.Validate();
  double total = 0.0;
  std::vector<double> prev = PooledLuminance(clip[0]);
  for (std::size_t n = 1; n < clip.size(); ++n) {
    std::vector<double> cur = PooledLuminance(clip[n]);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < cur.size(); ++i) {
      dot += prev[i] * cur[i];
      na += prev[i] * prev[i];
      nb += cur[i] * cur[i];
    }
    if (na == 0.0 && nb == 0.0) {
      total += 1.0;
    } else if (na > 0.0 && nb > 0.0) {
      total += dot / std::sqrt(na * nb);
    }
    prev = std::move(cur);
  }
  return total / static_cast<double>(clip.size() - 1);
}

VideoClip LinearBlend(const Frame& first, const Frame& last, std::size_t frames) {
  RequireSameGeometry(first, last, "linear blend");
  if (frames < 2) throw ContractError("linear blend: needs at least 2 frames");
  VideoClip out;
  for (std::size_t n = 0; n < frames; ++n) {
    const double alpha = static_cast<double>(n) / static_cast<double>(frames - 1);
    Frame f = first;
    for (std::size_t i = 0; i < f.pixels.size(); ++i) {
      f.pixels[i] = static_cast<float>((1.0 - alpha) * first.pixels[i] + alpha * last.pixels[i]);
    }
    out.frames.push_back(std::move(f));
  }
  return out;
}

ClipMetrics EvaluateClip(const std::string& name, const VideoClip& output,
                         const VideoClip& reference, std::span<const std::size_t> frames) {
  if (output.size() != reference.size()) {
    throw GeometryError("evaluate: clips differ in length");
  }
  std::vector<std::size_t> idx(frames.begin(), frames.end());
  if (idx.empty()) {
    for (std::size_t n = 0; n < output.size(); ++n) idx.push_back(n);
  }
  ClipMetrics m;
  m.name = name;
  for (std::size_t n : idx) {
    if (n >= output.size()) throw IndexError("evaluate: frame index out of range");
    m.psnr += Psnr(output[n], reference[n]);
    m.ssim += Ssim(output[n], reference[n]);
  }
  m.psnr /= static_cast<double>(idx.size());
  m.ssim /= static_cast<double>(idx.size());
  m.temporal_consistency = TemporalConsistency(output);
  return m;
}

std::string MetricsCsv(std::span<const ClipMetrics> rows) {
  std::ostringstream os;
  os.precision(9);
  os << "clip,psnr,ssim,temporal_consistency\n";
  for (const auto& r : rows) {
    os << r.name << ',' << r.psnr << ',' << r.ssim << ',' << r.temporal_consistency << '\n';
  }
  return os.str();
}

}  // namespace maskint
