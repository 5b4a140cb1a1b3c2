#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "maskint/errors.hpp"
#include "maskint/metrics.hpp"
#include "maskint/rng.hpp"

namespace maskint {
namespace {

Frame Noise(std::uint64_t seed, std::size_t h = 16, std::size_t w = 16, std::size_t c = 3) {
  Rng rng(seed);
  Frame f(h, w, c);
  for (float& v : f.pixels) v = static_cast<float>(0.2 + 0.6 * rng.Uniform());
  return f;
}

// Independent reference: plain double loop over every pixel.
double ReferencePsnr(const Frame& a, const Frame& b) {
  double se = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    se += d * d;
  }
  return 10.0 * std::log10(1.0 / (se / static_cast<double>(a.pixels.size())));
}

TEST(PsnrTest, UniformOffsetOfSixteenLevels) {
  const Frame a(32, 32, 3, 0.25f);
  Frame b = a;
  for (float& v : b.pixels) v += 16.0f / 255.0f;
  EXPECT_NEAR(Psnr(a, b), 20.0 * std::log10(255.0 / 16.0), 1e-4);
  EXPECT_NEAR(Psnr(a, b), 24.05, 0.01);
}

TEST(PsnrTest, MatchesReferenceOnNoise) {
  const Frame a = Noise(1), b = Noise(2);
  EXPECT_NEAR(Psnr(a, b), ReferencePsnr(a, b), 1e-9);
  EXPECT_DOUBLE_EQ(Psnr(a, b), Psnr(b, a));
}

TEST(PsnrTest, IdenticalFramesHitTheCap) {
  const Frame a = Noise(3);
  EXPECT_EQ(Psnr(a, a), kPsnrCap);
}

TEST(PsnrTest, GeometryMismatchThrows) {
  EXPECT_THROW(Psnr(Frame(8, 8, 3), Frame(8, 8, 1)), GeometryError);
}

TEST(SsimTest, IdenticalIsOne) {
  const Frame a = Noise(4);
  EXPECT_NEAR(Ssim(a, a), 1.0, 1e-12);
}

TEST(SsimTest, NegatedImageIsNegative) {
  const Frame a = Noise(5);
  Frame b = a;
  for (float& v : b.pixels) v = 1.0f - v;
  EXPECT_LT(Ssim(a, b), 0.0);
}

TEST(SsimTest, NoiseLowersScore) {
  const Frame a = Noise(6);
  Frame slight = a, heavy = a;
  Rng rng(7);
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double n = rng.Uniform() - 0.5;
    slight.pixels[i] += static_cast<float>(0.02 * n);
    heavy.pixels[i] += static_cast<float>(0.3 * n);
  }
  const double s1 = Ssim(a, slight), s2 = Ssim(a, heavy);
  EXPECT_LT(s1, 1.0);
  EXPECT_LT(s2, s1);
}

TEST(SsimTest, WindowLargerThanFrameThrows) {
  EXPECT_THROW(Ssim(Frame(4, 4, 1), Frame(4, 4, 1)), GeometryError);
}

TEST(TemporalConsistencyTest, StaticClipIsOne) {
  VideoClip clip;
  for (int n = 0; n < 5; ++n) clip.frames.push_back(Noise(8));
  EXPECT_NEAR(TemporalConsistency(clip), 1.0, 1e-12);
}

TEST(TemporalConsistencyTest, BlackFramesCountAsConsistent) {
  VideoClip clip;
  for (int n = 0; n < 3; ++n) clip.frames.push_back(Frame(16, 16, 3, 0.0f));
  EXPECT_EQ(TemporalConsistency(clip), 1.0);
}

TEST(TemporalConsistencyTest, DisjointHalvesAreOrthogonal) {
  Frame left(16, 16, 1, 0.0f), right(16, 16, 1, 0.0f);
  for (std::size_t y = 0; y < 16; ++y) {
    for (std::size_t x = 0; x < 8; ++x) left.at(y, x) = 1.0f;
    for (std::size_t x = 8; x < 16; ++x) right.at(y, x) = 1.0f;
  }
  EXPECT_NEAR(TemporalConsistency(VideoClip{{left, right}}), 0.0, 1e-12);
  // Mean of one orthogonal pair and one identical pair.
  EXPECT_NEAR(TemporalConsistency(VideoClip{{left, right, right}}), 0.5, 1e-12);
}

TEST(TemporalConsistencyTest, PooledDescriptorIsCellMean) {
  Frame f(16, 16, 1, 0.0f);
  f.at(0, 0) = 1.0f;
  const auto d = PooledLuminance(f);
  ASSERT_EQ(d.size(), 64u);
  EXPECT_NEAR(d[0], 0.25, 1e-12);
  for (std::size_t i = 1; i < 64; ++i) EXPECT_EQ(d[i], 0.0);
}

TEST(TemporalConsistencyTest, SingleFrameThrows) {
  EXPECT_THROW(TemporalConsistency(VideoClip{{Noise(9)}}), ContractError);
}

TEST(LinearBlendTest, MatchesFormula) {
  const Frame a = Noise(10), b = Noise(11);
  const VideoClip blend = LinearBlend(a, b, 5);
  ASSERT_EQ(blend.size(), 5u);
  EXPECT_EQ(blend[0], a);
  EXPECT_EQ(blend[4], b);
  for (std::size_t n = 0; n < 5; ++n) {
    const double t = static_cast<double>(n) / 4.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
      EXPECT_NEAR(blend[n].pixels[i], (1.0 - t) * a.pixels[i] + t * b.pixels[i], 1e-6);
    }
  }
}

TEST(EvaluateClipTest, SelectsFramesAndFormatsCsv) {
  VideoClip ref{{Noise(12), Noise(13), Noise(14)}};
  VideoClip out = ref;
  out[1] = Noise(15);
  const std::vector<std::size_t> ends{0, 2};
  const ClipMetrics exact = EvaluateClip("exact", out, ref, ends);
  EXPECT_EQ(exact.psnr, kPsnrCap);
  EXPECT_NEAR(exact.ssim, 1.0, 1e-12);
  const std::vector<std::size_t> middle{1};
  const ClipMetrics m = EvaluateClip("middle", out, ref, middle);
  EXPECT_NEAR(m.psnr, ReferencePsnr(out[1], ref[1]), 1e-9);
  EXPECT_DOUBLE_EQ(m.temporal_consistency, TemporalConsistency(out));
  const std::vector<ClipMetrics> rows{exact, m};
  const std::string csv = MetricsCsv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "clip,psnr,ssim,temporal_consistency");
  EXPECT_NE(csv.find("\nmiddle,"), std::string::npos);
  const std::vector<std::size_t> bad{3};
  EXPECT_THROW(EvaluateClip("bad", out, ref, bad), IndexError);
}

}  // namespace
}  // namespace maskint
