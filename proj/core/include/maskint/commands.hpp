#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "maskint/run_config.hpp"
#include "maskint/synthetic.hpp"

namespace maskint {

namespace fs = std::filesystem;

// MASKINT_THREADS, default 1. Throws ConfigError on a malformed value.
std::size_t ThreadsFromEnv();

// Per-module seeds derived from the run seed.
std::uint64_t DerivedSeed(std::uint64_t seed, const char* label);

// Writes clip_NNNN.mvid (RGB) and clip_NNNN.edges.mvid (structure maps).
void CmdGenData(const RunConfig& config, const fs::path& out_dir, std::ostream& log);

// Clips written by CmdGenData, in file name order.
std::vector<GeneratedClip> LoadDataset(const fs::path& data_dir);

// Writes color.mcbk and structure.mcbk.
void CmdFitTokenizer(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir,
                     std::ostream& log);

// Writes model.mckp (with both codebooks embedded) and loss.csv.
void CmdTrain(const RunConfig& config, const fs::path& data_dir, const fs::path& tokenizer_dir,
              const fs::path& out_dir, std::ostream& log);

struct InterpolateArgs {
  fs::path checkpoint;
  fs::path anchors;     // MVID holding the keyframes in order
  fs::path structures;  // MVID structure maps for every output frame
  fs::path out;         // MVID output video
  std::optional<fs::path> trace;
  std::vector<std::size_t> keyframes;  // empty: first and last frame
  std::size_t steps = 32;
  double temperature = 4.5;
  MaskScheduleKind schedule = MaskScheduleKind::kCosine;
  std::uint64_t seed = 0;
  bool drop_structure = false;
};

// Clips longer than the model's frame budget are split at the keyframes.
void CmdInterpolate(const InterpolateArgs& args, std::ostream& log);

// Metrics of `generated` against `reference` plus a linear-blend baseline
// row. `frames` selects the compared frames (all when empty).
void CmdEval(const fs::path& generated, const fs::path& reference, const fs::path& out_csv,
             const std::vector<std::size_t>& frames, std::ostream& log);

// Per-step table: k,masked_before,raw_after,masked_after
void CmdSchedule(std::size_t steps, MaskScheduleKind kind, std::size_t total, std::ostream& out);

// Multiply counts and wall time of one attention layer, window vs. global.
void CmdBenchAttention(const RunConfig& config, std::ostream& out);

}  // namespace maskint
