#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "maskint/decoder.hpp"
#include "maskint/mtm.hpp"
#include "maskint/transformer.hpp"

namespace maskint {

struct DataConfig {
  std::size_t clips = 20;
  std::size_t frames = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t min_shapes = 1;
  std::size_t max_shapes = 3;
  double edge_threshold = 0.1;

  void Validate() const;
};

struct TokenizerConfig {
  std::size_t color_size = 64;
  std::size_t structure_size = 32;
  std::size_t patch = 4;
  std::size_t max_iters = 50;

  void Validate() const;
};

struct BenchConfig {
  std::size_t repeats = 5;
};

// Everything a run needs, read from a flat key=value file:
//
//   # comment
//   seed = 7
//   model.embed_dim = 64
//   train.steps = 2000
//
// Unknown keys, malformed values and values violating a module's invariants
// are rejected with the offending line number.
struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  TokenizerConfig tokenizer;
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;
  BenchConfig bench;

  RunConfig();
  void Validate() const;
};

RunConfig ParseRunConfig(const std::string& text);
RunConfig LoadRunConfig(const std::filesystem::path& path);
// Every key with its current value; ParseRunConfig(FormatRunConfig(c)) == c.
std::string FormatRunConfig(const RunConfig& config);

// The model.* subset, used inside checkpoints.
std::string FormatModelConfig(const ModelConfig& config);
ModelConfig ParseModelConfig(const std::string& text);

}  // namespace maskint
