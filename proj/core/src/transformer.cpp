#include "maskint/transformer.hpp"

#include <cmath>
#include <string>

namespace maskint {
namespace {

constexpr std::size_t kKernel = 3;
constexpr std::size_t kMlpExpansion = 4;
constexpr std::size_t kFixedSlots = 6;  // embeddings, positions, down conv
constexpr std::size_t kBlockSlots = 12;

template <typename T>
Tensor<T> Normal(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.Normal() * stddev);
  return t;
}

template <typename T>
Tensor<T> Filled(Shape shape, T value) {
  Tensor<T> t(std::move(shape));
  t.Fill(value);
  return t;
}

ad::ConvGeometry DownGeometry(const ModelConfig& config, std::size_t frames) {
  ad::ConvGeometry g;
  g.frames = frames;
  g.height = config.token_rows;
  g.width = config.token_cols;
  g.kernel = kKernel;
  g.stride = config.conv_factor;
  g.padding = 1;
  return g;
}

ad::ConvGeometry UpGeometry(const ModelConfig& config, std::size_t frames) {
  ad::ConvGeometry g;
  g.frames = frames;
  g.height = config.grid_rows();
  g.width = config.grid_cols();
  g.kernel = kKernel;
  g.stride = config.conv_factor;
  g.padding = 1;
  g.output_padding = config.conv_factor - 1;
  return g;
}

void ValidateInput(const ModelConfig& config, const ModelInput& input) {
  if (!input.color || !input.structure) throw ContractError("model input needs both token grids");
  const TokenGrid& c = *input.color;
  const TokenGrid& s = *input.structure;
  if (c.frames != s.frames || c.rows != s.rows || c.cols != s.cols) {
    throw GeometryError("color and structure grids differ in shape");
  }
  if (c.rows != config.token_rows || c.cols != config.token_cols) {
    throw GeometryError("token grid " + std::to_string(c.rows) + "x" + std::to_string(c.cols) +
                        " does not match the model's " + std::to_string(config.token_rows) +
                        "x" + std::to_string(config.token_cols));
  }
  if (c.frames == 0 || c.frames > config.frames) {
    throw GeometryError("clip of " + std::to_string(c.frames) + " frames exceeds the model's " +
                        std::to_string(config.frames));
  }
  if (c.vocab != config.color_vocab || s.vocab != config.structure_vocab) {
    throw GeometryError("token vocabularies do not match the model");
  }
  if (s.masked_count() != 0) throw ContractError("structure grid must not contain masks");
  if (!input.structure_keep.empty() && input.structure_keep.size() != c.size()) {
    throw GeometryError("structure keep mask does not cover the grid");
  }
}

}  // namespace

void ModelConfig::Validate() const {
  auto fail = [](const std::string& why) { throw GeometryError("model config: " + why); };
  if (frames == 0 || token_rows == 0 || token_cols == 0) fail("grid extents must be positive");
  if (color_vocab < 2 || structure_vocab < 2) fail("vocabularies need at least 2 entries");
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    fail("embed_dim must be divisible by heads");
  }
  if (layers == 0) fail("need at least one layer");
  if (conv_factor != 1 && conv_factor != 2) fail("conv_factor must be 1 or 2");
  if (token_rows % conv_factor != 0 || token_cols % conv_factor != 0) {
    fail("token grid not divisible by conv_factor");
  }
  if (window_rows == 0 || window_cols == 0 || window_rows > grid_rows() ||
      window_cols > grid_cols()) {
    fail("window must fit inside the downsampled grid");
  }
  if (grid_rows() % window_rows != 0 || grid_cols() % window_cols != 0) {
    fail("downsampled grid not divisible by the window");
  }
  if (!(structure_dropout >= 0.0 && structure_dropout < 1.0)) {
    fail("structure_dropout must be in [0, 1)");
  }
}

template <typename T>
ModelParameters<T> ModelParameters<T>::Init(const ModelConfig& config, Rng& rng) {
  config.Validate();
  const std::size_t c = config.embed_dim;
  const std::size_t taps = kKernel * kKernel;
  const double residual_scale = 0.02 / std::sqrt(2.0 * static_cast<double>(config.layers));
  ModelParameters<T> p;
  p.color_embedding = Normal<T>({config.color_vocab + 1, c}, 0.02, rng);
  p.structure_embedding = Normal<T>({config.structure_vocab, c}, 0.02, rng);
  p.spatial_position = Normal<T>({config.token_rows * config.token_cols, c}, 0.02, rng);
  p.temporal_position = Normal<T>({config.frames, c}, 0.02, rng);
  p.down_weight = Normal<T>({taps * c, c}, 1.0 / std::sqrt(static_cast<double>(taps * c)), rng);
  p.down_bias = Tensor<T>({c});
  for (std::size_t l = 0; l < config.layers; ++l) {
    BlockParameters<T> b;
    b.norm1_gain = Filled<T>({c}, T(1));
    b.norm1_bias = Tensor<T>({c});
    b.qkv_weight = Normal<T>({c, 3 * c}, 0.02, rng);
    b.qkv_bias = Tensor<T>({3 * c});
    b.proj_weight = Normal<T>({c, c}, residual_scale, rng);
    b.proj_bias = Tensor<T>({c});
    b.norm2_gain = Filled<T>({c}, T(1));
    b.norm2_bias = Tensor<T>({c});
    b.mlp_in_weight = Normal<T>({c, kMlpExpansion * c}, 0.02, rng);
    b.mlp_in_bias = Tensor<T>({kMlpExpansion * c});
    b.mlp_out_weight = Normal<T>({kMlpExpansion * c, c}, residual_scale, rng);
    b.mlp_out_bias = Tensor<T>({c});
    p.blocks.push_back(std::move(b));
  }
  p.final_norm_gain = Filled<T>({c}, T(1));
  p.final_norm_bias = Tensor<T>({c});
  p.up_weight = Normal<T>({c, taps * c}, 1.0 / std::sqrt(2.25 * static_cast<double>(c)), rng);
  p.up_bias = Tensor<T>({c});
  p.output_weight = Normal<T>({c, config.color_vocab}, 0.02, rng);
  p.output_bias = Tensor<T>({config.color_vocab});
  return p;
}

template <typename T>
std::size_t ModelParameters<T>::ParameterCount() const {
  std::size_t n = 0;
  ForEach([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
  return n;
}

template <typename T>
template <typename U>
ModelParameters<U> ModelParameters<T>::Cast() const {
  std::vector<const Tensor<T>*> src;
  ForEach([&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
  ModelParameters<U> out;
  out.blocks.resize(blocks.size());
  std::size_t i = 0;
  out.ForEach([&](const std::string&, Tensor<U>& t) { t = src[i++]->template Cast<U>(); });
  return out;
}

template <typename T>
ParameterVars<T> ParameterVars<T>::Bind(ad::Tape<T>& tape, const ModelParameters<T>& params,
                                        bool trainable) {
  ParameterVars<T> out;
  params.ForEach([&](const std::string&, const Tensor<T>& t) {
    out.vars.push_back(trainable ? tape.Parameter(t) : tape.Constant(t));
  });
  return out;
}

template <typename T>
ModelParameters<T> ParameterVars<T>::Gradients(const ad::Tape<T>& tape,
                                               const ModelParameters<T>& like) const {
  ModelParameters<T> out = like;
  std::size_t i = 0;
  out.ForEach([&](const std::string&, Tensor<T>& t) { t = tape.grad(vars.at(i++)); });
  return out;
}

ad::WindowPartition SpatialPartition(std::size_t frames, std::size_t rows, std::size_t cols) {
  ad::WindowPartition p;
  p.tokens = frames * rows * cols;
  for (std::size_t n = 0; n < frames; ++n) {
    std::vector<std::uint32_t> group(rows * cols);
    for (std::size_t i = 0; i < rows * cols; ++i) {
      group[i] = static_cast<std::uint32_t>(n * rows * cols + i);
    }
    p.groups.push_back(std::move(group));
  }
  return p;
}

ad::WindowPartition TubePartition(std::size_t frames, std::size_t rows, std::size_t cols,
                                  std::size_t window_rows, std::size_t window_cols) {
  if (window_rows == 0 || window_cols == 0 || rows % window_rows != 0 ||
      cols % window_cols != 0) {
    throw GeometryError("tube window " + std::to_string(window_rows) + "x" +
                        std::to_string(window_cols) + " does not tile a " +
                        std::to_string(rows) + "x" + std::to_string(cols) + " grid");
  }
  ad::WindowPartition p;
  p.tokens = frames * rows * cols;
  for (std::size_t bi = 0; bi < rows / window_rows; ++bi) {
    for (std::size_t bj = 0; bj < cols / window_cols; ++bj) {
      std::vector<std::uint32_t> group;
      group.reserve(frames * window_rows * window_cols);
      for (std::size_t n = 0; n < frames; ++n) {
        for (std::size_t i = 0; i < window_rows; ++i) {
          for (std::size_t j = 0; j < window_cols; ++j) {
            const std::size_t r = bi * window_rows + i, c = bj * window_cols + j;
            group.push_back(static_cast<std::uint32_t>((n * rows + r) * cols + c));
          }
        }
      }
      p.groups.push_back(std::move(group));
    }
  }
  return p;
}

ad::WindowPartition GlobalPartition(std::size_t tokens) {
  ad::WindowPartition p;
  p.tokens = tokens;
  std::vector<std::uint32_t> all(tokens);
  for (std::size_t i = 0; i < tokens; ++i) all[i] = static_cast<std::uint32_t>(i);
  p.groups.push_back(std::move(all));
  return p;
}

ad::WindowPartition LayerPartition(const ModelConfig& config, AttentionKind kind,
                                   std::size_t frames) {
  if (kind == AttentionKind::kSpatial) {
    return SpatialPartition(frames, config.grid_rows(), config.grid_cols());
  }
  return TubePartition(frames, config.grid_rows(), config.grid_cols(), config.window_rows,
                       config.window_cols);
}

template <typename T>
ad::Var<T> Embed(ad::Tape<T>& tape, const ParameterVars<T>& vars, const ModelConfig& config,
                 const ModelInput& input) {
  (void)tape;
  ValidateInput(config, input);
  const TokenGrid& color = *input.color;
  const TokenGrid& structure = *input.structure;
  const std::size_t n = color.size();
  std::vector<std::int32_t> color_ids(n), structure_ids(n), spatial_ids(n), temporal_ids(n);
  for (std::size_t pos = 0; pos < n; ++pos) {
    if (color.masked[pos]) {
      color_ids[pos] = config.mask_id();
    } else {
      color_ids[pos] = color.ids[pos];
      if (color_ids[pos] < 0 || color_ids[pos] >= config.mask_id()) {
        throw IndexError("color token outside vocabulary at " + std::to_string(pos));
      }
    }
    structure_ids[pos] = structure.ids[pos];
    spatial_ids[pos] = static_cast<std::int32_t>(pos % color.per_frame());
    temporal_ids[pos] = static_cast<std::int32_t>(pos / color.per_frame());
  }
  ad::Var<T> x = ad::Embedding(vars.vars[0], std::move(color_ids));
  ad::Var<T> s = ad::Embedding(vars.vars[1], std::move(structure_ids));
  if (!input.structure_keep.empty()) {
    s = ad::ScaleRows(s, std::vector<T>(input.structure_keep.begin(), input.structure_keep.end()));
  }
  x = ad::Add(x, s);
  x = ad::Add(x, ad::Embedding(vars.vars[2], std::move(spatial_ids)));
  x = ad::Add(x, ad::Embedding(vars.vars[3], std::move(temporal_ids)));
  return x;
}

template <typename T>
Tensor<T> EmbedValues(const ModelParameters<T>& params, const ModelConfig& config,
                      const ModelInput& input) {
  ad::Tape<T> tape;
  const auto vars = ParameterVars<T>::Bind(tape, params, false);
  return Embed(tape, vars, config, input).value();
}

template <typename T>
ad::Var<T> AttentionLayer(ad::Tape<T>& tape, const ParameterVars<T>& vars,
                          const ModelConfig& config, std::size_t layer, ad::Var<T> x,
                          const ad::WindowPartition& partition) {
  (void)tape;
  const auto* b = &vars.vars[kFixedSlots + layer * kBlockSlots];
  ad::Var<T> h = ad::LayerNorm(x, b[0], b[1]);
  h = ad::AddBias(ad::MatMul(h, b[2]), b[3]);
  h = ad::WindowAttention(h, partition, config.heads);
  h = ad::AddBias(ad::MatMul(h, b[4]), b[5]);
  return ad::Add(x, h);
}

template <typename T>
ad::Var<T> Forward(ad::Tape<T>& tape, const ParameterVars<T>& vars, const ModelConfig& config,
                   const ModelInput& input) {
  config.Validate();
  const std::size_t frames = input.color ? input.color->frames : 0;
  ad::Var<T> x = Embed(tape, vars, config, input);
  ad::Var<T> h = ad::Conv2d(x, vars.vars[4], vars.vars[5], DownGeometry(config, frames));
  const ad::WindowPartition spatial = LayerPartition(config, AttentionKind::kSpatial, frames);
  const ad::WindowPartition tube = LayerPartition(config, AttentionKind::kTube, frames);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const auto& partition = config.layer_kind(l) == AttentionKind::kSpatial ? spatial : tube;
    h = AttentionLayer(tape, vars, config, l, h, partition);
    const auto* b = &vars.vars[kFixedSlots + l * kBlockSlots];
    ad::Var<T> m = ad::LayerNorm(h, b[6], b[7]);
    m = ad::Gelu(ad::AddBias(ad::MatMul(m, b[8]), b[9]));
    m = ad::AddBias(ad::MatMul(m, b[10]), b[11]);
    h = ad::Add(h, m);
  }
  const auto* tail = &vars.vars[kFixedSlots + config.layers * kBlockSlots];
  h = ad::LayerNorm(h, tail[0], tail[1]);
  h = ad::ConvTranspose2d(h, tail[2], tail[3], UpGeometry(config, frames));
  h = ad::Gelu(h);
  return ad::AddBias(ad::MatMul(h, tail[4]), tail[5]);
}

template <typename T>
Tensor<T> Logits(const ModelParameters<T>& params, const ModelConfig& config,
                 const ModelInput& input) {
  ad::Tape<T> tape;
  const auto vars = ParameterVars<T>::Bind(tape, params, false);
  return Forward(tape, vars, config, input).value();
}

template <typename T>
Tensor<T> JointKeyframeAttention(const Tensor<T>& queries, std::span<const Tensor<T>> keys,
                                 std::span<const Tensor<T>> values, std::size_t head_dim,
                                 Tensor<T>* weights) {
  if (queries.rank() != 2) throw GeometryError("joint attention: queries must be a matrix");
  if (keys.empty() || keys.size() != values.size()) {
    throw GeometryError("joint attention: need matching, non-empty key and value sets");
  }
  if (head_dim == 0) throw GeometryError("joint attention: head_dim must be positive");
  const std::size_t s = queries.extent(0), d = queries.extent(1);
  const std::size_t dv = values[0].rank() == 2 ? values[0].extent(1) : 0;
  for (std::size_t f = 0; f < keys.size(); ++f) {
    if (keys[f].rank() != 2 || keys[f].extent(0) != s || keys[f].extent(1) != d) {
      throw GeometryError("joint attention: key set " + std::to_string(f) + " is " +
                          ShapeString(keys[f].shape()) + ", expected " +
                          ShapeString(queries.shape()));
    }
    if (values[f].rank() != 2 || values[f].extent(0) != s || values[f].extent(1) != dv) {
      throw GeometryError("joint attention: value set " + std::to_string(f) +
                          " has inconsistent shape");
    }
  }
  const std::size_t total = s * keys.size();
  Tensor<T> kcat_t({d, total});
  Tensor<T> vcat({total, dv});
  for (std::size_t f = 0; f < keys.size(); ++f) {
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t k = 0; k < d; ++k) kcat_t.at(k, f * s + i) = keys[f].at(i, k);
      for (std::size_t k = 0; k < dv; ++k) vcat.at(f * s + i, k) = values[f].at(i, k);
    }
  }
  Tensor<T> scores = ad::MatMulValues(queries, kcat_t);
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  for (auto& v : scores.values()) v *= scale;
  Tensor<T> p = ad::SoftmaxValues(scores, 1);
  Tensor<T> out = ad::MatMulValues(p, vcat);
  if (weights) *weights = std::move(p);
  return out;
}

std::uint64_t ScoreMultiplies(const ad::WindowPartition& partition, std::size_t embed_dim) {
  std::uint64_t total = 0;
  for (const auto& g : partition.groups) {
    total += static_cast<std::uint64_t>(g.size()) * g.size() * embed_dim;
  }
  return total;
}

std::uint64_t TubeScoreMultiplies(std::size_t frames, std::size_t rows, std::size_t cols,
                                  std::size_t window_rows, std::size_t window_cols,
                                  std::size_t embed_dim) {
  const std::uint64_t windows = (rows / window_rows) * (cols / window_cols);
  const std::uint64_t tube = static_cast<std::uint64_t>(frames) * window_rows * window_cols;
  return windows * tube * tube * embed_dim;
}

std::uint64_t GlobalScoreMultiplies(std::size_t frames, std::size_t rows, std::size_t cols,
                                    std::size_t embed_dim) {
  const std::uint64_t t = static_cast<std::uint64_t>(frames) * rows * cols;
  return t * t * embed_dim;
}

#define MASKINT_INSTANTIATE_MODEL(T)                                                          \
  template struct ModelParameters<T>;                                                         \
  template struct ParameterVars<T>;                                                           \
  template ad::Var<T> Embed(ad::Tape<T>&, const ParameterVars<T>&, const ModelConfig&,        \
                            const ModelInput&);                                               \
  template Tensor<T> EmbedValues(const ModelParameters<T>&, const ModelConfig&,               \
                                 const ModelInput&);                                          \
  template ad::Var<T> AttentionLayer(ad::Tape<T>&, const ParameterVars<T>&,                   \
                                     const ModelConfig&, std::size_t, ad::Var<T>,             \
                                     const ad::WindowPartition&);                             \
  template ad::Var<T> Forward(ad::Tape<T>&, const ParameterVars<T>&, const ModelConfig&,      \
                              const ModelInput&);                                             \
  template Tensor<T> Logits(const ModelParameters<T>&, const ModelConfig&, const ModelInput&); \
  template Tensor<T> JointKeyframeAttention(const Tensor<T>&, std::span<const Tensor<T>>,     \
                                            std::span<const Tensor<T>>, std::size_t,          \
                                            Tensor<T>*);

MASKINT_INSTANTIATE_MODEL(float)
MASKINT_INSTANTIATE_MODEL(double)

template ModelParameters<double> ModelParameters<float>::Cast<double>() const;
template ModelParameters<float> ModelParameters<double>::Cast<float>() const;
template ModelParameters<float> ModelParameters<float>::Cast<float>() const;

#undef MASKINT_INSTANTIATE_MODEL

}  // namespace maskint
