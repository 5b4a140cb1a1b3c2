#include "maskint/vq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "maskint/rng.hpp"

namespace maskint {
namespace {

constexpr std::uint16_t kTokenVersion = 1;
constexpr std::uint16_t kCodebookVersion = 1;

double SquaredDistance(const float* a, const float* b, std::size_t d) {
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    total += diff * diff;
  }
  return total;
}

double SquaredDistance(const float* a, const double* b, std::size_t d) {
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = static_cast<double>(a[i]) - b[i];
    total += diff * diff;
  }
  return total;
}

// Nearest of `count` centers; ties to the lowest index.
template <typename C>
std::pair<std::size_t, double> NearestCenter(const float* patch, const C* centers,
                                             std::size_t count, std::size_t d) {
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < count; ++k) {
    const double dist = SquaredDistance(patch, centers + k * d, d);
    if (dist < best_dist) {
      best_dist = dist;
      best = k;
    }
  }
  return {best, best_dist};
}

void RequireDivisible(const Frame& frame, std::size_t pr, std::size_t pc) {
  if (pr == 0 || pc == 0 || frame.height % pr != 0 || frame.width % pc != 0) {
    throw GeometryError("frame " + std::to_string(frame.height) + "x" +
                        std::to_string(frame.width) + " is not divisible into " +
                        std::to_string(pr) + "x" + std::to_string(pc) + " patches");
  }
}

}  // namespace

const char* ChannelName(Channel c) { return c == Channel::kColor ? "color" : "structure"; }

TokenGrid TokenGrid::AllMasked(Channel channel, std::size_t frames, std::size_t rows,
                               std::size_t cols, std::size_t vocab) {
  TokenGrid g;
  g.channel = channel;
  g.frames = frames;
  g.rows = rows;
  g.cols = cols;
  g.vocab = vocab;
  g.ids.assign(frames * rows * cols, static_cast<std::int32_t>(vocab));
  g.masked.assign(frames * rows * cols, 1);
  return g;
}

std::size_t TokenGrid::masked_count() const {
  return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), std::uint8_t{1}));
}

void TokenGrid::Set(std::size_t pos, std::int32_t id) {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
    throw IndexError("token id " + std::to_string(id) + " outside [0," + std::to_string(vocab) +
                     ")");
  }
  ids.at(pos) = id;
  masked.at(pos) = 0;
}

void TokenGrid::Mask(std::size_t pos) {
  ids.at(pos) = mask_id();
  masked.at(pos) = 1;
}

TokenGrid TokenGrid::Slice(std::size_t first, std::size_t count) const {
  if (first + count > frames || count == 0) throw GeometryError("token slice out of range");
  TokenGrid g;
  g.channel = channel;
  g.frames = count;
  g.rows = rows;
  g.cols = cols;
  g.vocab = vocab;
  const std::size_t begin = first * per_frame(), end = (first + count) * per_frame();
  g.ids.assign(ids.begin() + begin, ids.begin() + end);
  g.masked.assign(masked.begin() + begin, masked.begin() + end);
  return g;
}

void TokenGrid::Validate() const {
  const std::size_t n = frames * rows * cols;
  if (n == 0) throw GeometryError("token grid has a zero extent");
  if (ids.size() != n || masked.size() != n) {
    throw GeometryError("token grid storage does not match its extents");
  }
  if (vocab < 2) throw GeometryError("token grid vocabulary must have at least 2 entries");
  for (std::size_t i = 0; i < n; ++i) {
    if (masked[i] > 1) throw FormatError("token grid: bad mask flag");
    if (!masked[i] && (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)) {
      throw IndexError("token grid: id " + std::to_string(ids[i]) + " at " +
                       std::to_string(i) + " outside vocabulary");
    }
  }
}

std::int32_t Codebook::Nearest(std::span<const float> patch) const {
  if (patch.size() != dim()) throw GeometryError("patch dimension does not match codebook");
  return static_cast<std::int32_t>(NearestCenter(patch.data(), entries.data(), size, dim()).first);
}

void Codebook::Validate() const {
  if (size < 2) throw GeometryError("codebook needs at least 2 entries");
  if (dim() == 0 || entries.size() != size * dim()) {
    throw GeometryError("codebook storage does not match M x d");
  }
  for (float v : entries) {
    if (!std::isfinite(v)) throw FormatError("codebook entry is not finite");
  }
}

Codebook FitCodebook(std::span<const float> patches, const CodebookSpec& spec) {
  const std::size_t d = spec.patch_rows * spec.patch_cols * spec.channels;
  if (d == 0 || patches.size() % d != 0) {
    throw GeometryError("patch buffer is not a whole number of " + std::to_string(d) +
                        "-vectors");
  }
  const std::size_t n = patches.size() / d;
  const std::size_t m = spec.size;
  if (m < 2) throw GeometryError("codebook size must be at least 2");
  if (n < m) {
    throw CapacityError("cannot fit " + std::to_string(m) + " entries to " + std::to_string(n) +
                        " patches");
  }
  Rng rng = Rng(spec.seed).Split("kmeans++");

  // k-means++ seeding.
  std::vector<double> centers(m * d);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  auto place = [&](std::size_t k, std::size_t idx) {
    for (std::size_t i = 0; i < d; ++i) centers[k * d + i] = patches[idx * d + i];
    for (std::size_t p = 0; p < n; ++p) {
      nearest[p] = std::min(nearest[p], SquaredDistance(&patches[p * d], &centers[k * d], d));
    }
  };
  place(0, rng.Below(n));
  for (std::size_t k = 1; k < m; ++k) {
    double total = 0.0;
    for (double v : nearest) total += v;
    if (total <= 0.0) {
      throw CapacityError("fewer than " + std::to_string(m) + " distinct patches");
    }
    const double target = rng.Uniform() * total;
    double run = 0.0;
    std::size_t pick = n;
    for (std::size_t p = 0; p < n; ++p) {
      if (nearest[p] <= 0.0) continue;
      run += nearest[p];
      pick = p;
      if (run > target) break;
    }
    place(k, pick);
  }

  // Lloyd iterations.
  Codebook cb;
  cb.channel = spec.channel;
  cb.patch_rows = spec.patch_rows;
  cb.patch_cols = spec.patch_cols;
  cb.channels = spec.channels;
  cb.size = m;
  std::vector<std::size_t> assign(n, m);
  std::vector<double> sums(m * d);
  std::vector<std::size_t> counts(m);
  for (std::size_t iter = 0; iter < std::max<std::size_t>(spec.max_iters, 1); ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const auto [k, dist] = NearestCenter(&patches[p * d], centers.data(), m, d);
      changed = changed || assign[p] != k;
      assign[p] = k;
      inertia += dist;
    }
    cb.stats.inertia_history.push_back(inertia);
    cb.stats.iterations = iter + 1;
    if (!changed) break;
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t p = 0; p < n; ++p) {
      ++counts[assign[p]];
      for (std::size_t i = 0; i < d; ++i) sums[assign[p] * d + i] += patches[p * d + i];
    }
    for (std::size_t k = 0; k < m; ++k) {
      if (counts[k] == 0) continue;  // an empty cluster keeps its center
      for (std::size_t i = 0; i < d; ++i) {
        // stored entries are f32; iterate on exactly those values
        centers[k * d + i] = static_cast<float>(sums[k * d + i] / static_cast<double>(counts[k]));
      }
    }
  }
  cb.entries.assign(centers.begin(), centers.end());
  cb.stats.inertia = Inertia(patches, cb);
  return cb;
}

double Inertia(std::span<const float> patches, const Codebook& codebook) {
  const std::size_t d = codebook.dim();
  double total = 0.0;
  for (std::size_t p = 0; p * d < patches.size(); ++p) {
    total += NearestCenter(&patches[p * d], codebook.entries.data(), codebook.size, d).second;
  }
  return total;
}

std::vector<float> ExtractPatches(const Frame& frame, std::size_t pr, std::size_t pc) {
  RequireDivisible(frame, pr, pc);
  const std::size_t c = frame.channels;
  std::vector<float> out;
  out.reserve(frame.pixels.size());
  for (std::size_t by = 0; by < frame.height / pr; ++by) {
    for (std::size_t bx = 0; bx < frame.width / pc; ++bx) {
      for (std::size_t y = 0; y < pr; ++y) {
        const float* src = &frame.pixels[((by * pr + y) * frame.width + bx * pc) * c];
        out.insert(out.end(), src, src + pc * c);
      }
    }
  }
  return out;
}

std::vector<float> ExtractPatches(std::span<const VideoClip> clips, std::size_t pr,
                                  std::size_t pc) {
  std::vector<float> out;
  for (const VideoClip& clip : clips) {
    for (const Frame& f : clip.frames) {
      const auto p = ExtractPatches(f, pr, pc);
      out.insert(out.end(), p.begin(), p.end());
    }
  }
  return out;
}

TokenGrid Encode(const Frame& frame, const Codebook& codebook) {
  if (frame.channels != codebook.channels) {
    throw ContractError(std::string("frame has ") + std::to_string(frame.channels) +
                        " channels but the " + ChannelName(codebook.channel) +
                        " codebook expects " + std::to_string(codebook.channels));
  }
  const std::vector<float> patches = ExtractPatches(frame, codebook.patch_rows, codebook.patch_cols);
  TokenGrid g;
  g.channel = codebook.channel;
  g.frames = 1;
  g.rows = frame.height / codebook.patch_rows;
  g.cols = frame.width / codebook.patch_cols;
  g.vocab = codebook.size;
  g.ids.resize(g.rows * g.cols);
  g.masked.assign(g.rows * g.cols, 0);
  const std::size_t d = codebook.dim();
  for (std::size_t p = 0; p < g.ids.size(); ++p) {
    g.ids[p] = codebook.Nearest({patches.data() + p * d, d});
  }
  return g;
}

TokenGrid Encode(const VideoClip& clip, const Codebook& codebook) {
  clip.Validate();
  TokenGrid out = Encode(clip.frames.front(), codebook);
  out.frames = clip.size();
  for (std::size_t n = 1; n < clip.size(); ++n) {
    const TokenGrid g = Encode(clip.frames[n], codebook);
    out.ids.insert(out.ids.end(), g.ids.begin(), g.ids.end());
    out.masked.insert(out.masked.end(), g.masked.begin(), g.masked.end());
  }
  return out;
}

Frame Decode(const TokenGrid& tokens, const Codebook& codebook, std::size_t frame) {
  if (frame >= tokens.frames) throw GeometryError("decode: frame index out of range");
  if (tokens.vocab != codebook.size) {
    throw GeometryError("decode: token vocabulary does not match codebook size");
  }
  const std::size_t pr = codebook.patch_rows, pc = codebook.patch_cols, c = codebook.channels;
  Frame out(tokens.rows * pr, tokens.cols * pc, c);
  for (std::size_t i = 0; i < tokens.rows; ++i) {
    for (std::size_t j = 0; j < tokens.cols; ++j) {
      const std::size_t pos = tokens.index(frame, i, j);
      if (tokens.masked[pos]) {
        throw ContractError("decode: masked position " + std::to_string(pos) + " in grid");
      }
      const std::int32_t id = tokens.ids[pos];
      if (id < 0 || static_cast<std::size_t>(id) >= codebook.size) {
        throw IndexError("decode: token id outside codebook");
      }
      const auto e = codebook.entry(static_cast<std::size_t>(id));
      for (std::size_t y = 0; y < pr; ++y) {
        std::copy_n(e.data() + y * pc * c, pc * c,
                    &out.pixels[((i * pr + y) * out.width + j * pc) * c]);
      }
    }
  }
  return out;
}

VideoClip DecodeClip(const TokenGrid& tokens, const Codebook& codebook) {
  VideoClip clip;
  for (std::size_t n = 0; n < tokens.frames; ++n) clip.frames.push_back(Decode(tokens, codebook, n));
  return clip;
}

std::vector<std::uint8_t> SerializeTokens(const TokenGrid& grid) {
  grid.Validate();
  if (grid.vocab > 0xffff) throw FormatError("token vocabulary too large for u16 ids");
  io::ByteWriter w;
  w.Bytes("MTOK");
  w.U16(kTokenVersion);
  w.U8(static_cast<std::uint8_t>(grid.channel));
  w.U32(static_cast<std::uint32_t>(grid.frames));
  w.U32(static_cast<std::uint32_t>(grid.rows));
  w.U32(static_cast<std::uint32_t>(grid.cols));
  w.U32(static_cast<std::uint32_t>(grid.vocab));
  for (std::int32_t id : grid.ids) w.U16(static_cast<std::uint16_t>(id));
  std::uint8_t byte = 0;
  for (std::size_t i = 0; i < grid.masked.size(); ++i) {
    if (grid.masked[i]) byte |= static_cast<std::uint8_t>(1u << (i % 8));
    if (i % 8 == 7) {
      w.U8(byte);
      byte = 0;
    }
  }
  if (grid.masked.size() % 8 != 0) w.U8(byte);
  return w.bytes();
}

TokenGrid DeserializeTokens(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "token file");
  r.Expect("MTOK");
  if (r.U16() != kTokenVersion) throw FormatError("token file: unsupported version");
  TokenGrid g;
  const std::uint8_t tag = r.U8();
  if (tag > 1) throw FormatError("token file: unknown channel tag");
  g.channel = static_cast<Channel>(tag);
  g.frames = r.U32();
  g.rows = r.U32();
  g.cols = r.U32();
  g.vocab = r.U32();
  const std::size_t n = g.frames * g.rows * g.cols;
  if (n == 0 || r.remaining() < n * 2) throw FormatError("token file: truncated");
  g.ids.resize(n);
  for (auto& id : g.ids) id = r.U16();
  g.masked.resize(n);
  std::uint8_t byte = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 8 == 0) byte = r.U8();
    g.masked[i] = (byte >> (i % 8)) & 1u;
  }
  r.ExpectEnd();
  g.Validate();
  return g;
}

void SaveTokens(const std::filesystem::path& path, const TokenGrid& grid) {
  io::WriteFile(path, SerializeTokens(grid));
}

TokenGrid LoadTokens(const std::filesystem::path& path) {
  return DeserializeTokens(io::ReadFile(path));
}

std::vector<std::uint8_t> SerializeCodebook(const Codebook& codebook) {
  codebook.Validate();
  io::ByteWriter w;
  w.Bytes("MCBK");
  w.U16(kCodebookVersion);
  w.U32(static_cast<std::uint32_t>(codebook.size));
  w.U32(static_cast<std::uint32_t>(codebook.dim()));
  w.U8(static_cast<std::uint8_t>(codebook.channel));
  w.U32(static_cast<std::uint32_t>(codebook.patch_rows));
  w.U32(static_cast<std::uint32_t>(codebook.patch_cols));
  for (float v : codebook.entries) w.F32(v);
  return w.bytes();
}

Codebook DeserializeCodebook(io::ByteReader& r) {
  r.Expect("MCBK");
  if (r.U16() != kCodebookVersion) throw FormatError("codebook: unsupported version");
  Codebook cb;
  cb.size = r.U32();
  const std::size_t d = r.U32();
  const std::uint8_t tag = r.U8();
  if (tag > 1) throw FormatError("codebook: unknown channel tag");
  cb.channel = static_cast<Channel>(tag);
  cb.patch_rows = r.U32();
  cb.patch_cols = r.U32();
  if (cb.patch_rows == 0 || cb.patch_cols == 0 || d % (cb.patch_rows * cb.patch_cols) != 0) {
    throw FormatError("codebook: dimension does not match patch geometry");
  }
  cb.channels = d / (cb.patch_rows * cb.patch_cols);
  if (r.remaining() < cb.size * d * 4) throw FormatError("codebook: truncated");
  cb.entries.resize(cb.size * d);
  for (auto& v : cb.entries) v = r.F32();
  cb.Validate();
  return cb;
}

void SaveCodebook(const std::filesystem::path& path, const Codebook& codebook) {
  io::WriteFile(path, SerializeCodebook(codebook));
}

Codebook LoadCodebook(const std::filesystem::path& path) {
  const auto bytes = io::ReadFile(path);
  io::ByteReader r(bytes, path.string());
  Codebook cb = DeserializeCodebook(r);
  r.ExpectEnd();
  return cb;
}

}  // namespace maskint
