#include "maskint/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "maskint/errors.hpp"

namespace maskint {

TransformerPredictor::TransformerPredictor(ModelConfig config, ModelParameters<float> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.Validate();
}

Tensor<float> TransformerPredictor::Predict(const TokenGrid& canvas, const TokenGrid& structure,
                                            bool drop_structure) const {
  ModelInput input{&canvas, &structure, {}};
  if (drop_structure) input.structure_keep.assign(canvas.size(), 0.0f);
  return Logits(params_, config_, input);
}

void DecodeConfig::Validate(std::size_t frames) const {
  if (steps == 0) throw ConfigError("decode: K must be at least 1");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("decode: temperature must be finite and non-negative");
  }
  if (anchors.empty()) throw ConfigError("decode: at least one anchor frame is required");
  for (std::size_t a : anchors) {
    if (a >= frames) {
      throw ConfigError("decode: anchor " + std::to_string(a) + " outside " +
                        std::to_string(frames) + " frames");
    }
  }
}

TokenGrid InitCanvas(std::span<const std::size_t> anchors,
                     std::span<const TokenGrid> anchor_tokens, std::size_t frames,
                     std::size_t rows, std::size_t cols, std::size_t vocab) {
  if (anchors.size() != anchor_tokens.size()) {
    throw ContractError("init canvas: " + std::to_string(anchors.size()) + " anchors but " +
                        std::to_string(anchor_tokens.size()) + " token grids");
  }
  TokenGrid canvas = TokenGrid::AllMasked(Channel::kColor, frames, rows, cols, vocab);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const TokenGrid& g = anchor_tokens[a];
    if (anchors[a] >= frames) throw ContractError("init canvas: anchor outside the clip");
    if (g.frames != 1 || g.rows != rows || g.cols != cols || g.masked_count() != 0) {
      throw ContractError("init canvas: anchor " + std::to_string(anchors[a]) +
                          " lacks a full token grid");
    }
    if (g.vocab != vocab) throw ContractError("init canvas: anchor vocabulary mismatch");
    const std::size_t base = anchors[a] * rows * cols;
    for (std::size_t i = 0; i < rows * cols; ++i) canvas.Set(base + i, g.ids[i]);
  }
  return canvas;
}

std::size_t RawMaskedAfterStep(std::size_t k, std::size_t steps, std::size_t total,
                               MaskScheduleKind kind) {
  const double r = static_cast<double>(k + 1) / static_cast<double>(steps);
  return static_cast<std::size_t>(std::floor(Gamma(r, kind) * static_cast<double>(total)));
}

std::size_t KeepCount(std::size_t k, std::size_t steps, std::size_t total, std::size_t before,
                      MaskScheduleKind kind) {
  if (before == 0) return 0;
  const std::size_t raw = RawMaskedAfterStep(k, steps, total, kind);
  const std::size_t reserve = steps - 1 - k;  // one commit for each later step
  return std::min(before - 1, std::max(raw, reserve));
}

std::vector<std::size_t> MaskPlan(std::size_t steps, std::size_t total, MaskScheduleKind kind) {
  std::vector<std::size_t> plan;
  std::size_t before = total;
  for (std::size_t k = 0; k < steps; ++k) {
    before = KeepCount(k, steps, total, before, kind);
    plan.push_back(before);
  }
  return plan;
}

std::vector<ScoredPosition> ScoreMaskedPositions(const Tensor<float>& logits,
                                                 const TokenGrid& canvas, std::size_t k,
                                                 const DecodeConfig& config, Rng& rng) {
  if (logits.rank() != 2 || logits.rows() != canvas.size() || logits.cols() != canvas.vocab) {
    throw GeometryError("decode: logits " + ShapeString(logits.shape()) + " do not match canvas");
  }
  const double noise = config.temperature *
                       (1.0 - static_cast<double>(k + 1) / static_cast<double>(config.steps));
  const std::size_t vocab = canvas.vocab;
  std::vector<double> logp(vocab);
  std::vector<ScoredPosition> out;
  for (std::size_t pos = 0; pos < canvas.size(); ++pos) {
    if (!canvas.is_masked(pos)) continue;
    const auto row = logits.row(pos);
    double mx = -std::numeric_limits<double>::infinity();
    for (float v : row) mx = std::max(mx, static_cast<double>(v));
    double z = 0.0;
    for (float v : row) z += std::exp(static_cast<double>(v) - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < vocab; ++c) logp[c] = static_cast<double>(row[c]) - lz;

    ScoredPosition s;
    s.position = static_cast<std::uint32_t>(pos);
    if (config.temperature == 0.0) {
      s.token = static_cast<std::int32_t>(std::max_element(logp.begin(), logp.end()) -
                                          logp.begin());
      s.confidence = logp[static_cast<std::size_t>(s.token)];
    } else {
      const double u = rng.Uniform();
      double acc = 0.0;
      std::size_t pick = vocab - 1;
      for (std::size_t c = 0; c < vocab; ++c) {
        acc += std::exp(logp[c]);
        if (u < acc) {
          pick = c;
          break;
        }
      }
      const double g = -std::log(-std::log(rng.UniformOpen()));
      s.token = static_cast<std::int32_t>(pick);
      s.confidence = logp[pick] + noise * g;
    }
    out.push_back(s);
  }
  return out;
}

DecodeStepRecord DecodeStep(const TokenPredictor& model, TokenGrid& canvas,
                            const TokenGrid& structure, std::size_t k, std::size_t total,
                            const DecodeConfig& config, Rng& rng) {
  if (k >= config.steps) throw ContractError("decode step: k must be below K");
  const std::size_t before = canvas.masked_count();
  if (before == 0) throw ContractError("decode step: canvas has no masked positions");
  const std::size_t after = KeepCount(k, config.steps, total, before, config.schedule);

  const Tensor<float> logits = model.Predict(canvas, structure, config.drop_structure);
  auto scored = ScoreMaskedPositions(logits, canvas, k, config, rng);
  std::sort(scored.begin(), scored.end(), [](const ScoredPosition& a, const ScoredPosition& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.position < b.position;
  });

  DecodeStepRecord rec;
  rec.step = k;
  rec.masked_before = before;
  rec.masked_after = after;
  const std::size_t commit = before - after;
  rec.min_kept_confidence = commit > 0 ? scored[commit - 1].confidence : 0.0;
  for (std::size_t i = 0; i < commit; ++i) {
    canvas.Set(scored[i].position, scored[i].token);
    rec.committed.push_back(scored[i].position);
  }
  std::sort(rec.committed.begin(), rec.committed.end());
  return rec;
}

DecodeTrace DecodeTokens(const TokenPredictor& model, TokenGrid& canvas,
                         const TokenGrid& structure, const DecodeConfig& config) {
  config.Validate(canvas.frames);
  if (structure.frames != canvas.frames || structure.rows != canvas.rows ||
      structure.cols != canvas.cols) {
    throw GeometryError("decode: structure tokens do not match the canvas");
  }
  if (canvas.frames > model.max_frames()) {
    throw GeometryError("decode: clip of " + std::to_string(canvas.frames) +
                        " frames exceeds the model's " + std::to_string(model.max_frames()));
  }
  Rng rng = Rng(config.seed).Split("decode");
  const std::size_t total = canvas.masked_count();
  DecodeTrace trace;
  for (std::size_t k = 0; k < config.steps && canvas.masked_count() > 0; ++k) {
    trace.steps.push_back(DecodeStep(model, canvas, structure, k, total, config, rng));
  }
  if (canvas.masked_count() != 0) {
    throw std::logic_error("decode: masked positions remain after the final step");
  }
  return trace;
}

InterpolationResult Interpolate(const TokenPredictor& model, std::span<const Frame> anchor_frames,
                                const StructureMapSequence& structures,
                                const Codebook& color, const Codebook& structure,
                                const DecodeConfig& config) {
  structures.Validate();
  const std::size_t frames = structures.size();
  config.Validate(frames);
  if (anchor_frames.size() != config.anchors.size()) {
    throw ContractError("interpolate: " + std::to_string(config.anchors.size()) +
                        " anchors but " + std::to_string(anchor_frames.size()) + " frames");
  }
  const TokenGrid structure_tokens = Encode(structures, structure);
  std::vector<TokenGrid> anchor_tokens;
  anchor_tokens.reserve(anchor_frames.size());
  for (const Frame& f : anchor_frames) anchor_tokens.push_back(Encode(f, color));

  InterpolationResult out;
  out.tokens = InitCanvas(config.anchors, anchor_tokens, frames, structure_tokens.rows,
                          structure_tokens.cols, color.size);
  out.trace = DecodeTokens(model, out.tokens, structure_tokens, config);
  out.video = DecodeClip(out.tokens, color);
  return out;
}

std::uint64_t SegmentSeed(std::uint64_t base_seed, std::size_t segment) {
  return Rng(base_seed).Split("segment").Split(static_cast<std::uint64_t>(segment)).NextU64();
}

VideoClip InterpolateLong(const TokenPredictor& model, std::span<const Keyframe> keyframes,
                          const StructureMapSequence& structures, const Codebook& color,
                          const Codebook& structure, const DecodeConfig& config,
                          std::span<const std::uint64_t> segment_seeds) {
  structures.Validate();
  if (keyframes.size() < 2) throw SegmentationError("long interpolation needs >= 2 keyframes");
  for (std::size_t j = 1; j < keyframes.size(); ++j) {
    if (keyframes[j].index <= keyframes[j - 1].index) {
      throw SegmentationError("keyframe indices must be strictly increasing");
    }
  }
  if (keyframes.front().index != 0 || keyframes.back().index + 1 != structures.size()) {
    throw SegmentationError("keyframes must start at frame 0 and end at frame " +
                            std::to_string(structures.size() - 1));
  }
  const std::size_t segments = keyframes.size() - 1;
  if (!segment_seeds.empty() && segment_seeds.size() != segments) {
    throw ContractError("long interpolation: expected " + std::to_string(segments) +
                        " segment seeds");
  }
  const std::size_t budget = model.max_frames();
  for (std::size_t j = 0; j < segments; ++j) {
    const std::size_t a = keyframes[j].index;
    const std::size_t b = keyframes[j + 1].index;
    if (b - a + 1 > budget) {
      std::ostringstream os;
      os << "segment " << j << " spans frames " << a << ".." << b << " (" << b - a + 1
         << " frames) but the model handles at most " << budget
         << "; insert a keyframe at or before frame " << a + budget - 1;
      throw SegmentationError(os.str());
    }
  }

  VideoClip out;
  for (std::size_t j = 0; j < segments; ++j) {
    const std::size_t a = keyframes[j].index;
    const std::size_t b = keyframes[j + 1].index;
    StructureMapSequence seg_structure;
    seg_structure.frames.assign(structures.frames.begin() + static_cast<std::ptrdiff_t>(a),
                                structures.frames.begin() + static_cast<std::ptrdiff_t>(b) + 1);
    DecodeConfig seg = config;
    seg.anchors = {0, b - a};
    seg.seed = segment_seeds.empty() ? SegmentSeed(config.seed, j) : segment_seeds[j];
    const Frame anchors[2] = {keyframes[j].frame, keyframes[j + 1].frame};
    auto result = Interpolate(model, anchors, seg_structure, color, structure, seg);
    const std::size_t skip = j == 0 ? 0 : 1;
    for (std::size_t n = skip; n < result.video.size(); ++n) {
      out.frames.push_back(std::move(result.video.frames[n]));
    }
  }
  return out;
}

std::string DecodeTraceCsv(const DecodeTrace& trace) {
  std::ostringstream os;
  os.precision(9);
  os << "k,masked_before,masked_after,min_kept_confidence\n";
  for (const auto& s : trace.steps) {
    os << s.step << ',' << s.masked_before << ',' << s.masked_after << ','
       << s.min_kept_confidence << '\n';
  }
  return os.str();
}

}  // namespace maskint
