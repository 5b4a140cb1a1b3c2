#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "maskint/errors.hpp"
#include "maskint/rng.hpp"
#include "maskint/synthetic.hpp"
#include "maskint/vq.hpp"

namespace maskint {
namespace {

double SquaredDistance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s;
}

Frame RandomFrame(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Frame f(h, w, c);
  for (float& v : f.pixels) v = static_cast<float>(rng.Uniform());
  return f;
}

Codebook RandomCodebook(std::size_t m, std::size_t channels, std::uint64_t seed) {
  Rng rng(seed);
  Codebook cb;
  cb.channel = channels == 3 ? Channel::kColor : Channel::kStructure;
  cb.channels = channels;
  cb.size = m;
  cb.entries.resize(m * cb.dim());
  for (float& v : cb.entries) v = static_cast<float>(rng.Uniform());
  return cb;
}

// Frame whose (py, px) patch is entry ids[py * cols + px].
Frame TileFrame(const Codebook& cb, const std::vector<std::int32_t>& ids, std::size_t rows,
                std::size_t cols) {
  Frame f(rows * cb.patch_rows, cols * cb.patch_cols, cb.channels);
  for (std::size_t py = 0; py < rows; ++py) {
    for (std::size_t px = 0; px < cols; ++px) {
      const auto e = cb.entry(static_cast<std::size_t>(ids[py * cols + px]));
      std::size_t k = 0;
      for (std::size_t y = 0; y < cb.patch_rows; ++y) {
        for (std::size_t x = 0; x < cb.patch_cols; ++x) {
          for (std::size_t c = 0; c < cb.channels; ++c) {
            f.at(py * cb.patch_rows + y, px * cb.patch_cols + x, c) = e[k++];
          }
        }
      }
    }
  }
  return f;
}

TEST(FitCodebookTest, ExactCoverRecoversVectors) {
  const std::size_t m = 6, d = 4;
  Rng rng(1);
  std::vector<float> patches(m * d);
  for (float& v : patches) v = static_cast<float>(rng.Uniform());
  CodebookSpec spec{Channel::kStructure, 2, 2, 1, m, 20, 3};
  const Codebook cb = FitCodebook(patches, spec);
  EXPECT_EQ(cb.stats.inertia, 0.0);
  std::multiset<std::vector<float>> want, got;
  for (std::size_t i = 0; i < m; ++i) {
    want.insert(std::vector<float>(patches.begin() + i * d, patches.begin() + (i + 1) * d));
    const auto e = cb.entry(i);
    got.insert(std::vector<float>(e.begin(), e.end()));
  }
  EXPECT_EQ(want, got);
}

TEST(FitCodebookTest, TwoBlobsFindTheirMeans) {
  Rng rng(2);
  const std::size_t per = 200, d = 4;
  std::vector<float> patches;
  std::vector<double> mean_a(d, 0.0), mean_b(d, 0.0);
  for (std::size_t i = 0; i < 2 * per; ++i) {
    const bool b = i >= per;
    for (std::size_t k = 0; k < d; ++k) {
      const float v = static_cast<float>((b ? 0.8 : 0.2) + 0.03 * rng.Normal());
      patches.push_back(v);
      (b ? mean_b : mean_a)[k] += v / static_cast<double>(per);
    }
  }
  const Codebook cb = FitCodebook(patches, {Channel::kStructure, 2, 2, 1, 2, 50, 4});
  for (const auto& mean : {mean_a, mean_b}) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < 2; ++e) {
      double worst = 0.0;
      for (std::size_t k = 0; k < d; ++k) worst = std::max(worst, std::abs(cb.entry(e)[k] - mean[k]));
      best = std::min(best, worst);
    }
    EXPECT_LT(best, 0.05);
  }
}

TEST(FitCodebookTest, BeatsRandomSubsetInitialization) {
  const Frame f = RandomFrame(32, 32, 3, 5);
  const auto patches = ExtractPatches(f, 4, 4);
  const CodebookSpec spec{Channel::kColor, 4, 4, 3, 8, 50, 6};
  const Codebook cb = FitCodebook(patches, spec);
  Rng rng(7);
  const std::size_t d = cb.dim(), n = patches.size() / d;
  for (int trial = 0; trial < 5; ++trial) {
    Codebook sub = cb;
    for (std::size_t e = 0; e < 8; ++e) {
      const std::size_t pick = rng.Below(n);
      std::copy_n(patches.begin() + pick * d, d, sub.entries.begin() + e * d);
    }
    EXPECT_LE(cb.stats.inertia, Inertia(patches, sub));
  }
}

TEST(FitCodebookTest, InertiaNeverIncreases) {
  const Frame f = RandomFrame(32, 32, 3, 8);
  const Codebook cb = FitCodebook(ExtractPatches(f, 4, 4), {Channel::kColor, 4, 4, 3, 16, 50, 9});
  const auto& h = cb.stats.inertia_history;
  ASSERT_FALSE(h.empty());
  for (std::size_t i = 1; i < h.size(); ++i) EXPECT_LE(h[i], h[i - 1]);
  EXPECT_LE(cb.stats.inertia, h.back());
  EXPECT_LE(cb.stats.iterations, 50u);
}

TEST(FitCodebookTest, TooFewPatchesIsCapacityError) {
  std::vector<float> patches(3 * 4, 0.5f);
  patches[0] = 0.1f;
  EXPECT_THROW(FitCodebook(patches, {Channel::kStructure, 2, 2, 1, 4, 10, 0}), CapacityError);
  // enough patches but only two distinct ones
  std::vector<float> dup(10 * 4, 0.5f);
  dup[0] = 0.1f;
  EXPECT_THROW(FitCodebook(dup, {Channel::kStructure, 2, 2, 1, 4, 10, 0}), CapacityError);
}

TEST(FitCodebookTest, EntriesDistinctAndFinite) {
  const Frame f = RandomFrame(32, 32, 3, 10);
  const Codebook cb = FitCodebook(ExtractPatches(f, 4, 4), {Channel::kColor, 4, 4, 3, 32, 50, 11});
  std::set<std::vector<float>> seen;
  for (std::size_t e = 0; e < cb.size; ++e) {
    const auto v = cb.entry(e);
    for (float x : v) EXPECT_TRUE(std::isfinite(x));
    seen.insert(std::vector<float>(v.begin(), v.end()));
  }
  EXPECT_EQ(seen.size(), cb.size);
}

TEST(EncodeTest, TiledFrameRecoversIndices) {
  const Codebook cb = RandomCodebook(16, 3, 12);
  Rng rng(13);
  std::vector<std::int32_t> ids(64);
  for (auto& id : ids) id = static_cast<std::int32_t>(rng.Below(16));
  const TokenGrid g = Encode(TileFrame(cb, ids, 8, 8), cb);
  EXPECT_EQ(g.ids, ids);
  EXPECT_EQ(g.masked_count(), 0u);
  EXPECT_EQ(g.rows, 8u);
  EXPECT_EQ(g.cols, 8u);
}

TEST(EncodeTest, ZeroFrameMapsToZeroEntry) {
  Codebook cb = RandomCodebook(8, 1, 14);
  std::fill_n(cb.entries.begin() + 5 * cb.dim(), cb.dim(), 0.0f);
  const TokenGrid g = Encode(Frame(16, 16, 1, 0.0f), cb);
  for (auto id : g.ids) EXPECT_EQ(id, 5);
}

TEST(EncodeTest, MatchesBruteForceScan) {
  const Codebook cb = RandomCodebook(32, 3, 15);
  const Frame f = RandomFrame(32, 32, 3, 16);
  const TokenGrid g = Encode(f, cb);
  for (std::size_t py = 0; py < 8; ++py) {
    for (std::size_t px = 0; px < 8; ++px) {
      std::vector<float> patch;
      for (std::size_t y = 0; y < 4; ++y) {
        for (std::size_t x = 0; x < 4; ++x) {
          for (std::size_t c = 0; c < 3; ++c) patch.push_back(f.at(py * 4 + y, px * 4 + x, c));
        }
      }
      std::int32_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < cb.size; ++e) {
        const double d = SquaredDistance(patch, cb.entry(e));
        if (d < best_d) {
          best_d = d;
          best = static_cast<std::int32_t>(e);
        }
      }
      EXPECT_EQ(g.ids[py * 8 + px], best);
    }
  }
}

TEST(EncodeTest, TiesBreakToLowestIndex) {
  Codebook cb = RandomCodebook(4, 1, 17);
  std::fill(cb.entries.begin(), cb.entries.end(), 1.0f);
  const TokenGrid g = Encode(Frame(4, 4, 1, 0.5f), cb);
  EXPECT_EQ(g.ids[0], 0);
}

TEST(EncodeTest, GeometryAndChannelErrors) {
  const Codebook cb = RandomCodebook(4, 3, 18);
  EXPECT_THROW(Encode(Frame(30, 32, 3), cb), GeometryError);
  EXPECT_THROW(Encode(Frame(32, 32, 1), cb), ContractError);
}

TEST(EncodeTest, InvariantToTraversalOrder) {
  // Encoding a transposed frame with a transposed codebook gives the
  // transposed token grid.
  const Codebook cb = RandomCodebook(16, 1, 19);
  Codebook cbt = cb;
  for (std::size_t e = 0; e < cb.size; ++e) {
    for (std::size_t y = 0; y < 4; ++y) {
      for (std::size_t x = 0; x < 4; ++x) cbt.entries[e * 16 + x * 4 + y] = cb.entries[e * 16 + y * 4 + x];
    }
  }
  const Frame f = RandomFrame(16, 24, 1, 20);
  Frame ft(24, 16, 1);
  for (std::size_t y = 0; y < 16; ++y) {
    for (std::size_t x = 0; x < 24; ++x) ft.at(x, y) = f.at(y, x);
  }
  const TokenGrid a = Encode(f, cb);
  const TokenGrid b = Encode(ft, cbt);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) EXPECT_EQ(a.ids[i * a.cols + j], b.ids[j * b.cols + i]);
  }
}

TEST(DecodeTest, RoundTripOnCentroidImageIsBitExact) {
  const Codebook cb = RandomCodebook(16, 3, 21);
  Rng rng(22);
  std::vector<std::int32_t> ids(16);
  for (auto& id : ids) id = static_cast<std::int32_t>(rng.Below(16));
  const Frame f = TileFrame(cb, ids, 4, 4);
  EXPECT_EQ(Decode(Encode(f, cb), cb), f);
}

TEST(DecodeTest, AllZeroGridTilesEntryZero) {
  const Codebook cb = RandomCodebook(8, 3, 23);
  TokenGrid g = TokenGrid::AllMasked(Channel::kColor, 1, 3, 2, 8);
  for (std::size_t i = 0; i < g.size(); ++i) g.Set(i, 0);
  EXPECT_EQ(Decode(g, cb), TileFrame(cb, std::vector<std::int32_t>(6, 0), 3, 2));
}

TEST(DecodeTest, MaskedPositionIsContractError) {
  const Codebook cb = RandomCodebook(8, 3, 24);
  TokenGrid g = TokenGrid::AllMasked(Channel::kColor, 1, 2, 2, 8);
  for (std::size_t i = 0; i < 3; ++i) g.Set(i, 1);
  EXPECT_THROW(Decode(g, cb), ContractError);
}

TEST(DecodeTest, ReconstructionBeatsAnySingleEntryTiling) {
  const Codebook cb = RandomCodebook(16, 3, 25);
  const Frame f = RandomFrame(16, 16, 3, 26);
  const Frame rec = Decode(Encode(f, cb), cb);
  auto mse = [&](const Frame& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::pow(a.pixels[i] - f.pixels[i], 2.0);
    return s;
  };
  const double ours = mse(rec);
  for (std::int32_t e = 0; e < 16; ++e) {
    EXPECT_LE(ours, mse(TileFrame(cb, std::vector<std::int32_t>(16, e), 4, 4)));
  }
}

TEST(DecodeTest, EncodeOfDecodeIsIdentityOnGrids) {
  const Codebook cb = RandomCodebook(32, 3, 27);
  Rng rng(28);
  TokenGrid g = TokenGrid::AllMasked(Channel::kColor, 1, 8, 8, 32);
  for (std::size_t i = 0; i < g.size(); ++i) g.Set(i, static_cast<std::int32_t>(rng.Below(32)));
  EXPECT_EQ(Encode(Decode(g, cb), cb), g);
}

TEST(VqTest, ReconstructionErrorFallsWithCodebookSize) {
  std::vector<VideoClip> clips;
  for (std::uint64_t s = 0; s < 6; ++s) clips.push_back(GenerateClip(SampleClipSpec(100 + s)).video);
  const auto patches = ExtractPatches(clips, 4, 4);
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t m : {8u, 32u, 64u}) {
    const Codebook cb = FitCodebook(patches, {Channel::kColor, 4, 4, 3, m, 50, 29});
    const double inertia = Inertia(patches, cb);
    EXPECT_LE(inertia, previous) << "M=" << m;
    previous = inertia;
  }
}

TEST(TokenGridTest, SetRejectsOutOfVocabulary) {
  TokenGrid g = TokenGrid::AllMasked(Channel::kColor, 1, 2, 2, 8);
  EXPECT_THROW(g.Set(0, 8), IndexError);
  EXPECT_THROW(g.Set(0, -1), IndexError);
  g.Set(0, 7);
  EXPECT_FALSE(g.is_masked(0));
  EXPECT_EQ(g.masked_count(), 3u);
}

TEST(TokenFileTest, RoundTrip) {
  Rng rng(30);
  TokenGrid g = TokenGrid::AllMasked(Channel::kStructure, 3, 4, 5, 32);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (rng.Uniform() < 0.7) g.Set(i, static_cast<std::int32_t>(rng.Below(32)));
  }
  const auto bytes = SerializeTokens(g);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MTOK");
  EXPECT_EQ(DeserializeTokens(bytes), g);
}

TEST(TokenFileTest, LayoutIsLittleEndianWithPackedMask) {
  TokenGrid g = TokenGrid::AllMasked(Channel::kColor, 1, 1, 3, 300);
  g.Set(0, 258);
  g.Set(2, 1);
  const auto b = SerializeTokens(g);
  // magic(4) version(2) channel(1) N h w M (4 x u32) ids (3 x u16) mask bits (1)
  ASSERT_EQ(b.size(), 4u + 2 + 1 + 16 + 6 + 1);
  EXPECT_EQ(b[6], 0);  // color
  EXPECT_EQ(b[7], 1);  // N
  EXPECT_EQ(b[19], 300 & 0xff);
  EXPECT_EQ(b[20], 300 >> 8);
  EXPECT_EQ(b[23], 258 & 0xff);
  EXPECT_EQ(b[24], 1);
  EXPECT_EQ(b[25], 300 & 0xff);  // masked position stores M
  EXPECT_EQ(b[29], 0b010);
}

TEST(TokenFileTest, RejectsCorruption) {
  TokenGrid g = TokenGrid::AllMasked(Channel::kColor, 1, 2, 2, 8);
  auto bytes = SerializeTokens(g);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(DeserializeTokens(bad), FormatError);
  bytes.pop_back();
  EXPECT_THROW(DeserializeTokens(bytes), FormatError);
}

TEST(CodebookFileTest, RoundTripIsBitExact) {
  const Frame f = RandomFrame(16, 16, 3, 31);
  const Codebook cb = FitCodebook(ExtractPatches(f, 4, 4), {Channel::kColor, 4, 4, 3, 8, 20, 32});
  const auto bytes = SerializeCodebook(cb);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MCBK");
  io::ByteReader reader(bytes);
  const Codebook back = DeserializeCodebook(reader);
  EXPECT_EQ(back.entries, cb.entries);
  EXPECT_EQ(back.size, cb.size);
  EXPECT_EQ(back.channel, cb.channel);
  EXPECT_EQ(back.patch_rows, 4u);
}

}  // namespace
}  // namespace maskint
