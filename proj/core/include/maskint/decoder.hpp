#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maskint/frame.hpp"
#include "maskint/mtm.hpp"
#include "maskint/rng.hpp"
#include "maskint/transformer.hpp"
#include "maskint/vq.hpp"

namespace maskint {

// Anything that maps a (partially masked) color canvas plus structure tokens
// to per-position logits over the color vocabulary.
class TokenPredictor {
 public:
  virtual ~TokenPredictor() = default;
  // (N*h*w) x M_c logits. `drop_structure` zeroes every structure embedding.
  virtual Tensor<float> Predict(const TokenGrid& canvas, const TokenGrid& structure,
                                bool drop_structure) const = 0;
  // Longest clip the predictor accepts.
  virtual std::size_t max_frames() const = 0;
};

class TransformerPredictor final : public TokenPredictor {
 public:
  TransformerPredictor(ModelConfig config, ModelParameters<float> params);
  Tensor<float> Predict(const TokenGrid& canvas, const TokenGrid& structure,
                        bool drop_structure) const override;
  std::size_t max_frames() const override { return config_.frames; }
  const ModelConfig& config() const { return config_; }
  const ModelParameters<float>& params() const { return params_; }

 private:
  ModelConfig config_;
  ModelParameters<float> params_;
};

struct DecodeConfig {
  std::size_t steps = 32;    // K
  double temperature = 4.5;  // t; 0 means greedy
  MaskScheduleKind schedule = MaskScheduleKind::kCosine;
  std::vector<std::size_t> anchors;  // keyframe indices inside the clip
  std::uint64_t seed = 0;
  bool drop_structure = false;

  void Validate(std::size_t frames) const;
};

struct DecodeStepRecord {
  std::size_t step = 0;
  std::size_t masked_before = 0;
  std::size_t masked_after = 0;
  std::vector<std::uint32_t> committed;  // ascending positions
  double min_kept_confidence = 0.0;      // lowest confidence among committed
};

struct DecodeTrace {
  std::vector<DecodeStepRecord> steps;
};

// Canvas with anchor frames filled from `anchor_tokens` (one 1 x h x w grid
// per anchor, aligned with `anchors`) and every other position masked.
TokenGrid InitCanvas(std::span<const std::size_t> anchors,
                     std::span<const TokenGrid> anchor_tokens, std::size_t frames,
                     std::size_t rows, std::size_t cols, std::size_t vocab);

// floor(gamma((k+1)/K) * total)
std::size_t RawMaskedAfterStep(std::size_t k, std::size_t steps, std::size_t total,
                               MaskScheduleKind kind);

// Tokens still masked after step k when `before` were masked going in:
// the raw count clamped so that at least one token is committed per step while
// any remain, and so that the final step leaves none.
std::size_t KeepCount(std::size_t k, std::size_t steps, std::size_t total, std::size_t before,
                      MaskScheduleKind kind);

// Masked counts after each step, starting from `total`.
std::vector<std::size_t> MaskPlan(std::size_t steps, std::size_t total, MaskScheduleKind kind);

struct ScoredPosition {
  std::uint32_t position = 0;
  std::int32_t token = 0;
  double confidence = 0.0;
};

// Draws a token for every masked position of `canvas` (ascending order) from
// softmax(logits) and scores it by its log-probability plus Gumbel noise
// scaled by t * (1 - (k+1)/K). With t = 0 the argmax is taken and no random
// numbers are consumed.
std::vector<ScoredPosition> ScoreMaskedPositions(const Tensor<float>& logits,
                                                 const TokenGrid& canvas, std::size_t k,
                                                 const DecodeConfig& config, Rng& rng);

// One iteration: predict, score every masked position, commit the most
// confident ones so that KeepCount(...) stay masked.
DecodeStepRecord DecodeStep(const TokenPredictor& model, TokenGrid& canvas,
                            const TokenGrid& structure, std::size_t k, std::size_t total,
                            const DecodeConfig& config, Rng& rng);

// Runs all K steps on a prepared canvas.
DecodeTrace DecodeTokens(const TokenPredictor& model, TokenGrid& canvas,
                         const TokenGrid& structure, const DecodeConfig& config);

struct InterpolationResult {
  VideoClip video;
  TokenGrid tokens;
  DecodeTrace trace;
};

// `anchor_frames` are aligned with config.anchors; `structures` covers the
// whole clip.
InterpolationResult Interpolate(const TokenPredictor& model, std::span<const Frame> anchor_frames,
                                const StructureMapSequence& structures,
                                const Codebook& color, const Codebook& structure,
                                const DecodeConfig& config);

struct Keyframe {
  std::size_t index = 0;
  Frame frame;
};

// Seed used for segment j when none is supplied.
std::uint64_t SegmentSeed(std::uint64_t base_seed, std::size_t segment);

// Interpolates each consecutive keyframe pair independently and concatenates
// the segments; shared keyframes appear once. Keyframes must start at 0 and end
// at the last structure frame. `segment_seeds`, when non-empty, overrides the
// per-segment seeds. Throws SegmentationError when a gap exceeds the model's
// frame budget.
VideoClip InterpolateLong(const TokenPredictor& model, std::span<const Keyframe> keyframes,
                          const StructureMapSequence& structures, const Codebook& color,
                          const Codebook& structure, const DecodeConfig& config,
                          std::span<const std::uint64_t> segment_seeds = {});

// Decode trace as CSV: k,masked_before,masked_after,min_kept_confidence
std::string DecodeTraceCsv(const DecodeTrace& trace);

}  // namespace maskint
