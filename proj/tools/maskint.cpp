#include <CLI11.hpp>

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "maskint/commands.hpp"
#include "maskint/errors.hpp"

namespace {

using maskint::RunConfig;

RunConfig LoadConfig(const std::string& path, const CLI::Option* seed_opt, std::uint64_t seed) {
  RunConfig config = path.empty() ? maskint::ParseRunConfig("") : maskint::LoadRunConfig(path);
  if (seed_opt->count() > 0) config.seed = seed;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"maskint: structure-aware frame interpolation with a masked token transformer"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
  std::string data_dir;
  std::string tokenizer_dir;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "render synthetic clips and their edge maps");
  gen->add_option("--config", config_path, "key=value run config")->check(CLI::ExistingFile);
  auto* gen_seed = gen->add_option("--seed", seed, "run seed");
  gen->add_option("--out", out, "output directory")->required();

  // fit-tokenizer
  auto* fit = app.add_subcommand("fit-tokenizer", "fit color and structure codebooks");
  fit->add_option("--config", config_path, "key=value run config")->check(CLI::ExistingFile);
  auto* fit_seed = fit->add_option("--seed", seed, "run seed");
  fit->add_option("--data", data_dir, "directory written by gen-data")->required();
  fit->add_option("--out", out, "output directory")->required();
  std::size_t color_size = 0, structure_size = 0;
  auto* fit_mc = fit->add_option("-M,--color-size", color_size, "color codebook size");
  auto* fit_ms = fit->add_option("--structure-size", structure_size, "structure codebook size");

  // train
  auto* train = app.add_subcommand("train", "train the masked token transformer");
  train->add_option("--config", config_path, "key=value run config")->check(CLI::ExistingFile);
  auto* train_seed = train->add_option("--seed", seed, "run seed");
  train->add_option("--data", data_dir, "directory written by gen-data")->required();
  train->add_option("--tokenizer", tokenizer_dir, "directory written by fit-tokenizer")
      ->required();
  train->add_option("--out", out, "output directory")->required();

  // interpolate
  maskint::InterpolateArgs ia;
  std::string ckpt, anchors, structures, trace;
  std::uint32_t steps = 32;
  float temperature = 4.5f;
  std::string schedule = "cosine";
  auto* interp = app.add_subcommand("interpolate", "fill the frames between keyframes");
  interp->add_option("--config", config_path, "key=value run config (decode.* keys)")
      ->check(CLI::ExistingFile);
  interp->add_option("--checkpoint", ckpt, "model.mckp")->required()->check(CLI::ExistingFile);
  interp->add_option("--anchors", anchors, "MVID clip holding the keyframes in order")
      ->required()
      ->check(CLI::ExistingFile);
  interp->add_option("--structures", structures, "MVID structure maps of every output frame")
      ->required()
      ->check(CLI::ExistingFile);
  interp->add_option("--keyframes", ia.keyframes, "keyframe indices (default: first,last)")
      ->delimiter(',');
  auto* interp_k = interp->add_option("-K,--steps", steps, "decoding steps")->check(CLI::PositiveNumber);
  auto* interp_t = interp->add_option("-t,--temperature", temperature, "sampling temperature")
                       ->check(CLI::NonNegativeNumber);
  auto* interp_s = interp->add_option("--schedule", schedule, "cosine or linear");
  auto* interp_seed = interp->add_option("--seed", seed, "decoding seed");
  interp->add_flag("--drop-structure", ia.drop_structure, "zero every structure embedding");
  interp->add_option("--trace", trace, "write the per-step decode trace CSV here");
  interp->add_option("--out", out, "output MVID video")->required();

  // eval
  std::string generated, reference;
  std::vector<std::size_t> frames;
  auto* eval = app.add_subcommand("eval", "PSNR, SSIM and temporal consistency");
  eval->add_option("--generated", generated, "MVID clip to score")->required()->check(CLI::ExistingFile);
  eval->add_option("--reference", reference, "MVID ground truth")->required()->check(CLI::ExistingFile);
  eval->add_option("--frames", frames, "compared frame indices (default: all)")->delimiter(',');
  eval->add_option("--out", out, "metrics CSV")->required();

  // schedule
  std::size_t total = 0;
  auto* sched = app.add_subcommand("schedule", "print the per-step masked-token counts");
  sched->add_option("-K,--steps", steps, "decoding steps")->check(CLI::PositiveNumber);
  sched->add_option("-T,--total", total, "masked tokens at the start")->required();
  sched->add_option("--schedule", schedule, "cosine or linear");

  // bench
  auto* bench = app.add_subcommand("bench", "attention multiply counts and timing");
  bench->add_option("--config", config_path, "key=value run config")->check(CLI::ExistingFile);
  auto* bench_seed = bench->add_option("--seed", seed, "run seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      maskint::CmdGenData(LoadConfig(config_path, gen_seed, seed), out, std::cerr);
    } else if (fit->parsed()) {
      RunConfig config = LoadConfig(config_path, fit_seed, seed);
      if (fit_mc->count() > 0) config.tokenizer.color_size = color_size;
      if (fit_ms->count() > 0) config.tokenizer.structure_size = structure_size;
      config.tokenizer.Validate();
      maskint::CmdFitTokenizer(config, data_dir, out, std::cerr);
    } else if (train->parsed()) {
      maskint::CmdTrain(LoadConfig(config_path, train_seed, seed), data_dir, tokenizer_dir, out,
                        std::cerr);
    } else if (interp->parsed()) {
      const RunConfig config = config_path.empty() ? RunConfig{} : maskint::LoadRunConfig(config_path);
      ia.checkpoint = ckpt;
      ia.anchors = anchors;
      ia.structures = structures;
      ia.out = out;
      if (!trace.empty()) ia.trace = trace;
      ia.steps = interp_k->count() > 0 ? steps : config.decode.steps;
      ia.temperature = interp_t->count() > 0 ? temperature : config.decode.temperature;
      ia.schedule =
          interp_s->count() > 0 ? maskint::ParseMaskSchedule(schedule) : config.decode.schedule;
      ia.seed = interp_seed->count() > 0 ? seed : config.seed;
      ia.drop_structure = ia.drop_structure || config.decode.drop_structure;
      maskint::CmdInterpolate(ia, std::cerr);
    } else if (eval->parsed()) {
      maskint::CmdEval(generated, reference, out, frames, std::cout);
    } else if (sched->parsed()) {
      maskint::CmdSchedule(steps, maskint::ParseMaskSchedule(schedule), total, std::cout);
    } else if (bench->parsed()) {
      maskint::CmdBenchAttention(LoadConfig(config_path, bench_seed, seed), std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "maskint: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
