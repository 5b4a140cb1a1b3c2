#include "maskint/mtm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <thread>

#include "maskint/errors.hpp"

namespace maskint {

MaskScheduleKind ParseMaskSchedule(const std::string& name) {
  if (name == "cosine") return MaskScheduleKind::kCosine;
  if (name == "linear") return MaskScheduleKind::kLinear;
  throw ConfigError("unknown mask schedule '" + name + "' (expected cosine or linear)");
}

const char* MaskScheduleName(MaskScheduleKind kind) {
  return kind == MaskScheduleKind::kCosine ? "cosine" : "linear";
}

double Gamma(double r, MaskScheduleKind kind) {
  if (!(r >= 0.0 && r <= 1.0)) {
    throw DomainError("mask schedule: r must lie in [0, 1], got " + std::to_string(r));
  }
  if (kind == MaskScheduleKind::kLinear) return 1.0 - r;
  if (r == 1.0) return 0.0;
  return std::cos(std::numbers::pi * r / 2.0);
}

std::size_t CorruptionCount(std::size_t frames, std::size_t rows, std::size_t cols,
                            std::size_t anchor_count, double r, MaskScheduleKind kind) {
  if (anchor_count >= frames) throw ContractError("corrupt: anchors cover every frame");
  const double g = Gamma(r, kind);
  const double eligible = static_cast<double>((frames - anchor_count) * rows * cols);
  return static_cast<std::size_t>(std::floor(g * eligible));
}

Corruption Corrupt(const TokenGrid& color, double r, std::span<const std::size_t> anchors,
                   MaskScheduleKind kind, Rng& rng) {
  std::vector<std::uint8_t> is_anchor(color.frames, 0);
  for (std::size_t a : anchors) {
    if (a >= color.frames) {
      throw ContractError("corrupt: anchor " + std::to_string(a) + " outside " +
                          std::to_string(color.frames) + " frames");
    }
    is_anchor[a] = 1;
  }
  const std::size_t anchor_count =
      static_cast<std::size_t>(std::count(is_anchor.begin(), is_anchor.end(), 1));
  const std::size_t count =
      CorruptionCount(color.frames, color.rows, color.cols, anchor_count, r, kind);

  std::vector<std::uint32_t> candidates;
  const std::size_t per = color.per_frame();
  for (std::size_t n = 0; n < color.frames; ++n) {
    if (is_anchor[n]) continue;
    for (std::size_t i = 0; i < per; ++i) {
      candidates.push_back(static_cast<std::uint32_t>(n * per + i));
    }
  }
  // partial Fisher-Yates
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.Below(candidates.size() - i);
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());

  Corruption out{color, std::move(candidates)};
  for (std::uint32_t p : out.positions) out.tokens.Mask(p);
  return out;
}

std::vector<float> StructureDropoutMask(std::size_t positions, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("structure dropout: p must lie in [0, 1]");
  std::vector<float> keep(positions, 1.0f);
  if (p == 0.0) return keep;
  for (float& k : keep) {
    if (rng.Uniform() < p) k = 0.0f;
  }
  return keep;
}

template <typename T>
Tensor<T> StructureDropout(const Tensor<T>& rows, double p, Rng& rng) {
  const auto keep = StructureDropoutMask(rows.rows(), p, rng);
  Tensor<T> out = rows;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    if (keep[r] != 0.0f) continue;
    auto row = out.row(r);
    std::fill(row.begin(), row.end(), T(0));
  }
  return out;
}

template <typename T>
ad::Var<T> MtmLoss(ad::Var<T> logits, const TokenGrid& ground_truth,
                   std::span<const std::uint32_t> positions) {
  if (positions.empty()) throw ContractError("mtm loss: empty mask set");
  std::vector<std::uint32_t> rows(positions.begin(), positions.end());
  std::vector<std::int32_t> targets;
  targets.reserve(rows.size());
  for (std::uint32_t p : rows) {
    if (p >= ground_truth.size()) throw IndexError("mtm loss: position out of range");
    if (ground_truth.is_masked(p)) throw ContractError("mtm loss: ground truth is masked");
    targets.push_back(ground_truth.ids[p]);
  }
  return ad::CrossEntropy(logits, std::move(rows), std::move(targets));
}

template Tensor<float> StructureDropout(const Tensor<float>&, double, Rng&);
template Tensor<double> StructureDropout(const Tensor<double>&, double, Rng&);
template ad::Var<float> MtmLoss(ad::Var<float>, const TokenGrid&, std::span<const std::uint32_t>);
template ad::Var<double> MtmLoss(ad::Var<double>, const TokenGrid&,
                                 std::span<const std::uint32_t>);

void TrainConfig::Validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (min_learning_rate_fraction < 0.0 || min_learning_rate_fraction > 1.0) {
    throw ConfigError("train: min_learning_rate_fraction must lie in [0, 1]");
  }
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("train: betas must lie in [0, 1)");
  }
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be non-negative");
  if (grad_clip < 0.0) throw ConfigError("train: grad_clip must be non-negative");
  if (structure_dropout < 0.0 || structure_dropout >= 1.0) {
    throw ConfigError("train: structure_dropout must lie in [0, 1)");
  }
  if (threads == 0) throw ConfigError("train: threads must be positive");
}

double LearningRateAt(const TrainConfig& config, std::size_t step) {
  if (step < config.warmup_steps) {
    return config.learning_rate * static_cast<double>(step + 1) /
           static_cast<double>(config.warmup_steps);
  }
  const double span = static_cast<double>(std::max<std::size_t>(
      1, config.steps > config.warmup_steps ? config.steps - config.warmup_steps : 1));
  const double progress =
      std::min(1.0, static_cast<double>(step - config.warmup_steps) / span);
  const double floor = config.min_learning_rate_fraction;
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return config.learning_rate * (floor + (1.0 - floor) * cosine);
}

std::vector<TrainingExample> TokenizeDataset(std::span<const GeneratedClip> clips,
                                             const Codebook& color, const Codebook& structure) {
  std::vector<TrainingExample> out;
  out.reserve(clips.size());
  for (const auto& clip : clips) {
    out.push_back({Encode(clip.video, color), Encode(clip.structure, structure)});
  }
  return out;
}

namespace {

struct Draw {
  std::size_t example = 0;
  Corruption corruption;
  std::vector<float> keep;
  double r = 0.0;
};

struct ElementResult {
  double loss = 0.0;
  ModelParameters<float> grads;
};

ElementResult RunElement(const ModelParameters<float>& params, const ModelConfig& model,
                         const TrainingExample& example, const Draw& draw) {
  ad::Tape<float> tape;
  const auto vars = ParameterVars<float>::Bind(tape, params, true);
  ModelInput input{&draw.corruption.tokens, &example.structure, draw.keep};
  const auto logits = Forward(tape, vars, model, input);
  const auto loss = MtmLoss(logits, example.color, draw.corruption.positions);
  tape.Backward(loss);
  return {static_cast<double>(loss.value()[0]), vars.Gradients(tape, params)};
}

void AddInto(ModelParameters<float>& total, const ModelParameters<float>& part) {
  std::vector<const Tensor<float>*> parts;
  part.ForEach([&](const std::string&, const Tensor<float>& t) { parts.push_back(&t); });
  std::size_t i = 0;
  total.ForEach([&](const std::string&, Tensor<float>& t) {
    const auto src = parts[i++]->values();
    auto dst = t.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  });
}

bool Decays(const std::string& name) {
  return name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
}

}  // namespace

TrainResult Train(std::span<const TrainingExample> dataset, const ModelConfig& model,
                  const TrainConfig& config, const TrainProgress& progress) {
  model.Validate();
  config.Validate();
  if (dataset.empty()) throw ContractError("train: empty dataset");
  for (const auto& ex : dataset) {
    if (ex.color.frames != model.frames || ex.color.rows != model.token_rows ||
        ex.color.cols != model.token_cols || ex.color.vocab != model.color_vocab) {
      throw GeometryError("train: example color tokens do not match the model config");
    }
    if (ex.structure.frames != ex.color.frames || ex.structure.rows != ex.color.rows ||
        ex.structure.cols != ex.color.cols || ex.structure.vocab != model.structure_vocab) {
      throw GeometryError("train: example structure tokens do not match the model config");
    }
  }

  const Rng root(config.seed);
  Rng init_rng = root.Split("init");
  TrainResult result{ModelParameters<float>::Init(model, init_rng), {}};
  auto& params = result.params;

  ModelParameters<float> m = params;
  ModelParameters<float> v = params;
  const auto zero = [](const std::string&, Tensor<float>& t) { t.Fill(0.0f); };
  m.ForEach(zero);
  v.ForEach(zero);

  const std::vector<std::size_t> anchors{0, model.frames - 1};
  const std::size_t positions = model.frames * model.token_rows * model.token_cols;
  const std::size_t threads = std::min(config.threads, config.batch_size);

  for (std::size_t step = 0; step < config.steps; ++step) {
    Rng step_rng = root.Split("step").Split(step);
    std::vector<Draw> draws(config.batch_size);
    double ratio_sum = 0.0;
    for (auto& d : draws) {
      d.example = step_rng.Below(dataset.size());
      const auto& ex = dataset[d.example];
      do {
        d.r = step_rng.UniformOpen();
        d.corruption = Corrupt(ex.color, d.r, anchors, config.schedule, step_rng);
      } while (d.corruption.positions.empty());
      d.keep = StructureDropoutMask(positions, config.structure_dropout, step_rng);
      ratio_sum += static_cast<double>(d.corruption.positions.size()) /
                   static_cast<double>((model.frames - 2) * model.token_rows * model.token_cols);
    }

    std::vector<ElementResult> results(config.batch_size);
    if (threads <= 1) {
      for (std::size_t b = 0; b < draws.size(); ++b) {
        results[b] = RunElement(params, model, dataset[draws[b].example], draws[b]);
      }
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
          for (std::size_t b = t; b < draws.size(); b += threads) {
            results[b] = RunElement(params, model, dataset[draws[b].example], draws[b]);
          }
        });
      }
      for (auto& th : pool) th.join();
    }

    double loss = 0.0;
    ModelParameters<float> grads = std::move(results[0].grads);
    loss += results[0].loss;
    for (std::size_t b = 1; b < results.size(); ++b) {
      AddInto(grads, results[b].grads);
      loss += results[b].loss;
    }
    const double inv_batch = 1.0 / static_cast<double>(config.batch_size);
    loss *= inv_batch;
    if (!std::isfinite(loss)) {
      throw TrainingDiverged("train: loss became " + std::to_string(loss) + " at step " +
                             std::to_string(step) + " (lr " +
                             std::to_string(LearningRateAt(config, step)) +
                             "); lower the learning rate or raise grad_clip");
    }

    double norm_sq = 0.0;
    grads.ForEach([&](const std::string&, Tensor<float>& g) {
      for (float& x : g.values()) {
        x = static_cast<float>(x * inv_batch);
        norm_sq += static_cast<double>(x) * x;
      }
    });
    const double norm = std::sqrt(norm_sq);
    if (!std::isfinite(norm)) {
      throw TrainingDiverged("train: gradient norm became non-finite at step " +
                             std::to_string(step));
    }
    const double clip =
        (config.grad_clip > 0.0 && norm > config.grad_clip) ? config.grad_clip / norm : 1.0;

    const double lr = LearningRateAt(config, step);
    const double t = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);

    std::vector<Tensor<float>*> gs, ms, vs;
    grads.ForEach([&](const std::string&, Tensor<float>& x) { gs.push_back(&x); });
    m.ForEach([&](const std::string&, Tensor<float>& x) { ms.push_back(&x); });
    v.ForEach([&](const std::string&, Tensor<float>& x) { vs.push_back(&x); });
    std::size_t idx = 0;
    params.ForEach([&](const std::string& name, Tensor<float>& p) {
      auto pw = p.values();
      auto gw = gs[idx]->values();
      auto mw = ms[idx]->values();
      auto vw = vs[idx]->values();
      ++idx;
      const double decay = Decays(name) ? config.weight_decay : 0.0;
      for (std::size_t k = 0; k < pw.size(); ++k) {
        const double g = gw[k] * clip;
        const double mk = config.beta1 * mw[k] + (1.0 - config.beta1) * g;
        const double vk = config.beta2 * vw[k] + (1.0 - config.beta2) * g * g;
        mw[k] = static_cast<float>(mk);
        vw[k] = static_cast<float>(vk);
        const double update = (mk / bc1) / (std::sqrt(vk / bc2) + 1e-8);
        pw[k] = static_cast<float>(pw[k] - lr * (update + decay * pw[k]));
      }
    });

    LossRecord record{step, loss, lr, ratio_sum * inv_batch};
    result.trace.push_back(record);
    if (progress) progress(record);
  }
  return result;
}

TrainResult Train(std::span<const GeneratedClip> dataset, const Codebook& color,
                  const Codebook& structure, const ModelConfig& model, const TrainConfig& config,
                  const TrainProgress& progress) {
  const auto tokens = TokenizeDataset(dataset, color, structure);
  return Train(std::span<const TrainingExample>(tokens), model, config, progress);
}

std::string LossTraceCsv(std::span<const LossRecord> trace) {
  std::ostringstream os;
  os.precision(9);
  os << "step,loss,learning_rate,mask_ratio\n";
  for (const auto& r : trace) {
    os << r.step << ',' << r.loss << ',' << r.learning_rate << ',' << r.mask_ratio << '\n';
  }
  return os.str();
}

}  // namespace maskint
