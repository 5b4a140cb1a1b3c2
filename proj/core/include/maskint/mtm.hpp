#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "maskint/rng.hpp"
#include "maskint/synthetic.hpp"
#include "maskint/transformer.hpp"
#include "maskint/vq.hpp"

namespace maskint {

enum class MaskScheduleKind { kCosine, kLinear };

MaskScheduleKind ParseMaskSchedule(const std::string& name);
const char* MaskScheduleName(MaskScheduleKind kind);

// Fraction of tokens still masked at progress r: cos(pi r / 2) or 1 - r.
// Throws DomainError for r outside [0, 1].
double Gamma(double r, MaskScheduleKind kind);

struct Corruption {
  TokenGrid tokens;                     // input with MASK at `positions`
  std::vector<std::uint32_t> positions; // ascending
};

// floor(gamma(r) * (N - |anchors|) * h * w)
std::size_t CorruptionCount(std::size_t frames, std::size_t rows, std::size_t cols,
                            std::size_t anchor_count, double r, MaskScheduleKind kind);

// Masks CorruptionCount(...) positions drawn uniformly without replacement
// from the non-anchor frames. Anchor frames are never touched.
Corruption Corrupt(const TokenGrid& color, double r, std::span<const std::size_t> anchors,
                   MaskScheduleKind kind, Rng& rng);

// Per-position keep factors: 0 with probability p, else 1.
std::vector<float> StructureDropoutMask(std::size_t positions, double p, Rng& rng);

// Zeroes each row of `rows` independently with probability p.
template <typename T>
Tensor<T> StructureDropout(const Tensor<T>& rows, double p, Rng& rng);

// Mean cross entropy over the masked positions only.
template <typename T>
ad::Var<T> MtmLoss(ad::Var<T> logits, const TokenGrid& ground_truth,
                   std::span<const std::uint32_t> positions);

struct TrainConfig {
  std::size_t batch_size = 4;
  std::size_t steps = 2000;
  double learning_rate = 2e-3;
  double min_learning_rate_fraction = 0.05;  // cosine decay floor
  std::size_t warmup_steps = 50;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double grad_clip = 1.0;
  double structure_dropout = 0.1;
  MaskScheduleKind schedule = MaskScheduleKind::kCosine;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void Validate() const;
};

// Learning rate at `step` (0-based): linear warmup, then cosine decay.
double LearningRateAt(const TrainConfig& config, std::size_t step);

struct TrainingExample {
  TokenGrid color;
  TokenGrid structure;
};

std::vector<TrainingExample> TokenizeDataset(std::span<const GeneratedClip> clips,
                                             const Codebook& color, const Codebook& structure);

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
  double mask_ratio = 0.0;
};

struct TrainResult {
  ModelParameters<float> params;
  std::vector<LossRecord> trace;
};

using TrainProgress = std::function<void(const LossRecord&)>;

// Masked token modeling with anchors {0, N-1}. Deterministic given the seed,
// independent of the thread count.
TrainResult Train(std::span<const TrainingExample> dataset, const ModelConfig& model,
                  const TrainConfig& config, const TrainProgress& progress = {});

TrainResult Train(std::span<const GeneratedClip> dataset, const Codebook& color,
                  const Codebook& structure, const ModelConfig& model, const TrainConfig& config,
                  const TrainProgress& progress = {});

// Loss trace as CSV: step,loss,learning_rate,mask_ratio
std::string LossTraceCsv(std::span<const LossRecord> trace);

}  // namespace maskint
