#include "maskint/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <string>

#include "maskint/checkpoint.hpp"
#include "maskint/decoder.hpp"
#include "maskint/errors.hpp"
#include "maskint/metrics.hpp"
#include "maskint/binary_io.hpp"

namespace maskint {

std::size_t ThreadsFromEnv() {
  const char* v = std::getenv("MASKINT_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) {
    throw ConfigError(std::string("MASKINT_THREADS must be an integer in [1, 1024], got '") + v +
                      "'");
  }
  return static_cast<std::size_t>(n);
}

std::uint64_t DerivedSeed(std::uint64_t seed, const char* label) {
  return Rng(seed).Split(label).NextU64();
}

namespace {

std::string ClipName(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%04zu", i);
  return buf;
}

void WriteText(const fs::path& path, const std::string& text) {
  io::WriteFile(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace

void CmdGenData(const RunConfig& config, const fs::path& out_dir, std::ostream& log) {
  const auto& d = config.data;
  const Rng root = Rng(config.seed).Split("data");
  const SobelEdgeExtractor extractor(static_cast<float>(d.edge_threshold));
  for (std::size_t i = 0; i < d.clips; ++i) {
    Rng r = root.Split(static_cast<std::uint64_t>(i));
    const ClipSpec spec =
        SampleClipSpec(r.NextU64(), d.frames, d.height, d.width, d.min_shapes, d.max_shapes);
    const GeneratedClip clip = GenerateClip(spec, extractor);
    SaveClip(out_dir / (ClipName(i) + ".mvid"), clip.video);
    SaveClip(out_dir / (ClipName(i) + ".edges.mvid"), clip.structure);
  }
  log << "wrote " << d.clips << " clips to " << out_dir.string() << "\n";
}

std::vector<GeneratedClip> LoadDataset(const fs::path& data_dir) {
  if (!fs::is_directory(data_dir)) {
    throw ContractError("data directory '" + data_dir.string() + "' does not exist");
  }
  std::vector<fs::path> videos;
  for (const auto& e : fs::directory_iterator(data_dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("clip_", 0) == 0 && name.size() > 5 &&
        name.find(".edges.") == std::string::npos && e.path().extension() == ".mvid") {
      videos.push_back(e.path());
    }
  }
  std::sort(videos.begin(), videos.end());
  if (videos.empty()) throw ContractError("no clip_*.mvid files in '" + data_dir.string() + "'");
  std::vector<GeneratedClip> out;
  for (const auto& v : videos) {
    fs::path edges = v;
    edges.replace_extension(".edges.mvid");
    out.push_back({LoadClip(v), LoadClip(edges)});
  }
  return out;
}

void CmdFitTokenizer(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir,
                     std::ostream& log) {
  const auto data = LoadDataset(data_dir);
  std::vector<VideoClip> videos, structures;
  for (const auto& c : data) {
    videos.push_back(c.video);
    structures.push_back(c.structure);
  }
  const auto& t = config.tokenizer;
  const Rng root = Rng(config.seed).Split("tokenizer");

  CodebookSpec color{Channel::kColor, t.patch, t.patch, 3, t.color_size, t.max_iters,
                     root.Split("color").NextU64()};
  CodebookSpec edges{Channel::kStructure, t.patch, t.patch, 1, t.structure_size, t.max_iters,
                     root.Split("structure").NextU64()};
  const Codebook cc = FitCodebook(ExtractPatches(videos, t.patch, t.patch), color);
  const Codebook sc = FitCodebook(ExtractPatches(structures, t.patch, t.patch), edges);
  SaveCodebook(out_dir / "color.mcbk", cc);
  SaveCodebook(out_dir / "structure.mcbk", sc);
  log << "color codebook: M=" << cc.size << " inertia=" << cc.stats.inertia
      << " iterations=" << cc.stats.iterations << "\n";
  log << "structure codebook: M=" << sc.size << " inertia=" << sc.stats.inertia
      << " iterations=" << sc.stats.iterations << "\n";
}

void CmdTrain(const RunConfig& config, const fs::path& data_dir, const fs::path& tokenizer_dir,
              const fs::path& out_dir, std::ostream& log) {
  const auto data = LoadDataset(data_dir);
  Checkpoint ckpt;
  ckpt.config = config.model;
  ckpt.color = LoadCodebook(tokenizer_dir / "color.mcbk");
  ckpt.structure = LoadCodebook(tokenizer_dir / "structure.mcbk");
  if (ckpt.color->size != config.model.color_vocab ||
      ckpt.structure->size != config.model.structure_vocab) {
    throw ConfigError("codebook sizes do not match model.color_vocab / model.structure_vocab");
  }
  TrainConfig train = config.train;
  train.seed = DerivedSeed(config.seed, "train");
  train.threads = ThreadsFromEnv();
  const std::size_t every = std::max<std::size_t>(1, train.steps / 20);
  auto result = Train(data, *ckpt.color, *ckpt.structure, config.model, train,
                      [&](const LossRecord& r) {
                        if (r.step % every == 0 || r.step + 1 == train.steps) {
                          log << "step " << r.step << " loss " << r.loss << " lr "
                              << r.learning_rate << "\n";
                        }
                      });
  ckpt.params = std::move(result.params);
  SaveCheckpoint(out_dir / "model.mckp", ckpt);
  WriteText(out_dir / "loss.csv", LossTraceCsv(result.trace));
  log << "wrote " << (out_dir / "model.mckp").string() << "\n";
}

void CmdInterpolate(const InterpolateArgs& args, std::ostream& log) {
  const Checkpoint ckpt = LoadCheckpoint(args.checkpoint);
  if (!ckpt.color || !ckpt.structure) {
    throw FormatError("checkpoint '" + args.checkpoint.string() + "' carries no codebooks");
  }
  const VideoClip anchors = LoadClip(args.anchors);
  const VideoClip structures = LoadClip(args.structures);
  std::vector<std::size_t> keyframes = args.keyframes;
  if (keyframes.empty()) keyframes = {0, structures.size() - 1};
  if (keyframes.size() != anchors.size()) {
    throw ContractError(std::to_string(keyframes.size()) + " keyframe indices but " +
                        std::to_string(anchors.size()) + " anchor frames");
  }
  const TransformerPredictor model(ckpt.config, ckpt.params);

  DecodeConfig decode;
  decode.steps = args.steps;
  decode.temperature = args.temperature;
  decode.schedule = args.schedule;
  decode.seed = args.seed;
  decode.drop_structure = args.drop_structure;
  decode.anchors = keyframes;

  VideoClip video;
  if (structures.size() <= model.max_frames()) {
    auto result = Interpolate(model, anchors.frames, structures, *ckpt.color, *ckpt.structure,
                              decode);
    if (args.trace) WriteText(*args.trace, DecodeTraceCsv(result.trace));
    video = std::move(result.video);
  } else {
    std::vector<Keyframe> keys;
    for (std::size_t i = 0; i < keyframes.size(); ++i) keys.push_back({keyframes[i], anchors[i]});
    video = InterpolateLong(model, keys, structures, *ckpt.color, *ckpt.structure, decode);
    if (args.trace) {
      log << "note: decode trace is not written for segmented interpolation\n";
    }
  }
  SaveClip(args.out, video);
  log << "wrote " << video.size() << " frames to " << args.out.string() << "\n";
}

void CmdEval(const fs::path& generated, const fs::path& reference, const fs::path& out_csv,
             const std::vector<std::size_t>& frames, std::ostream& log) {
  const VideoClip out = LoadClip(generated);
  const VideoClip ref = LoadClip(reference);
  std::vector<ClipMetrics> rows;
  rows.push_back(EvaluateClip(generated.stem().string(), out, ref, frames));
  const VideoClip blend = LinearBlend(ref.frames.front(), ref.frames.back(), ref.size());
  rows.push_back(EvaluateClip("linear_blend", blend, ref, frames));
  const std::string csv = MetricsCsv(rows);
  WriteText(out_csv, csv);
  log << csv;
}

void CmdSchedule(std::size_t steps, MaskScheduleKind kind, std::size_t total, std::ostream& out) {
  if (steps == 0) throw ConfigError("schedule: K must be at least 1");
  out << "k,masked_before,raw_after,masked_after\n";
  std::size_t before = total;
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t raw = RawMaskedAfterStep(k, steps, total, kind);
    const std::size_t after = KeepCount(k, steps, total, before, kind);
    out << k << ',' << before << ',' << raw << ',' << after << '\n';
    before = after;
  }
}

void CmdBenchAttention(const RunConfig& config, std::ostream& out) {
  const ModelConfig& m = config.model;
  const std::size_t rows = m.grid_rows(), cols = m.grid_cols();
  const std::size_t tokens = m.frames * rows * cols;
  Rng rng = Rng(config.seed).Split("bench");
  Tensor<float> qkv({tokens, 3 * m.embed_dim});
  for (float& v : qkv.values()) v = static_cast<float>(rng.Normal());

  struct Row {
    const char* name;
    ad::WindowPartition partition;
    std::uint64_t analytic;
  };
  const Row cases[] = {
      {"spatial", SpatialPartition(m.frames, rows, cols),
       ScoreMultiplies(SpatialPartition(m.frames, rows, cols), m.embed_dim)},
      {"tube", TubePartition(m.frames, rows, cols, m.window_rows, m.window_cols),
       TubeScoreMultiplies(m.frames, rows, cols, m.window_rows, m.window_cols, m.embed_dim)},
      {"global", GlobalPartition(tokens),
       GlobalScoreMultiplies(m.frames, rows, cols, m.embed_dim)},
  };
  out << "kind,groups,score_multiplies,analytic_score_multiplies,value_multiplies,ms_per_layer\n";
  for (const Row& c : cases) {
    ad::AttentionCounter counter;
    double best = 1e300;
    for (std::size_t rep = 0; rep < std::max<std::size_t>(1, config.bench.repeats); ++rep) {
      ad::Tape<float> tape;
      const auto x = tape.Constant(qkv);
      ad::AttentionCounter local;
      const auto start = std::chrono::steady_clock::now();
      {
        ad::ScopedAttentionCounter scope(&local);
        (void)ad::WindowAttention(x, c.partition, m.heads);
      }
      const double ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - start)
                            .count();
      best = std::min(best, ms);
      counter = local;
    }
    out << c.name << ',' << c.partition.groups.size() << ',' << counter.score_multiplies << ','
        << c.analytic << ',' << counter.value_multiplies << ',' << best << '\n';
  }
}

}  // namespace maskint
