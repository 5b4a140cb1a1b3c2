#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "maskint/autodiff.hpp"
#include "maskint/rng.hpp"
#include "maskint/tensor.hpp"
#include "maskint/vq.hpp"

namespace maskint {

enum class AttentionKind { kSpatial, kTube };

struct ModelConfig {
  std::size_t frames = 8;       // N the model is trained on (rows of P^T)
  std::size_t token_rows = 8;   // h
  std::size_t token_cols = 8;   // w
  std::size_t color_vocab = 64;
  std::size_t structure_vocab = 32;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 4;
  std::size_t window_rows = 2;  // tube window, in downsampled tokens
  std::size_t window_cols = 2;
  std::size_t conv_factor = 2;  // 1 disables down/upsampling
  double structure_dropout = 0.1;

  std::int32_t mask_id() const { return static_cast<std::int32_t>(color_vocab); }
  std::size_t head_dim() const { return embed_dim / heads; }
  std::size_t grid_rows() const { return token_rows / conv_factor; }
  std::size_t grid_cols() const { return token_cols / conv_factor; }

  // Spatial attention in even layers, tube attention in odd layers.
  AttentionKind layer_kind(std::size_t layer) const {
    return layer % 2 == 0 ? AttentionKind::kSpatial : AttentionKind::kTube;
  }

  void Validate() const;
};

template <typename T>
struct BlockParameters {
  Tensor<T> norm1_gain, norm1_bias;
  Tensor<T> qkv_weight, qkv_bias;
  Tensor<T> proj_weight, proj_bias;
  Tensor<T> norm2_gain, norm2_bias;
  Tensor<T> mlp_in_weight, mlp_in_bias;
  Tensor<T> mlp_out_weight, mlp_out_bias;
};

// Every learned tensor of the model. Row-major tables have embed_dim columns.
template <typename T>
struct ModelParameters {
  Tensor<T> color_embedding;      // (M_c + 1) x c, last row is [MASK]
  Tensor<T> structure_embedding;  // M_s x c
  Tensor<T> spatial_position;     // (h * w) x c
  Tensor<T> temporal_position;    // N x c
  Tensor<T> down_weight, down_bias;
  std::vector<BlockParameters<T>> blocks;
  Tensor<T> final_norm_gain, final_norm_bias;
  Tensor<T> up_weight, up_bias;
  Tensor<T> output_weight, output_bias;  // c x M_c

  static ModelParameters Init(const ModelConfig& config, Rng& rng);

  // Visits (name, tensor) in a fixed order; used for serialization, the
  // optimizer and gradient checks.
  template <typename F>
  void ForEach(F&& f) {
    ForEachImpl(*this, f);
  }
  template <typename F>
  void ForEach(F&& f) const {
    ForEachImpl(*this, f);
  }

  std::size_t ParameterCount() const;

  template <typename U>
  ModelParameters<U> Cast() const;

 private:
  template <typename Self, typename F>
  static void ForEachImpl(Self& self, F& f) {
    f("color_embedding", self.color_embedding);
    f("structure_embedding", self.structure_embedding);
    f("spatial_position", self.spatial_position);
    f("temporal_position", self.temporal_position);
    f("down.weight", self.down_weight);
    f("down.bias", self.down_bias);
    for (std::size_t l = 0; l < self.blocks.size(); ++l) {
      auto& b = self.blocks[l];
      const std::string p = "block" + std::to_string(l) + ".";
      f(p + "norm1.gain", b.norm1_gain);
      f(p + "norm1.bias", b.norm1_bias);
      f(p + "qkv.weight", b.qkv_weight);
      f(p + "qkv.bias", b.qkv_bias);
      f(p + "proj.weight", b.proj_weight);
      f(p + "proj.bias", b.proj_bias);
      f(p + "norm2.gain", b.norm2_gain);
      f(p + "norm2.bias", b.norm2_bias);
      f(p + "mlp_in.weight", b.mlp_in_weight);
      f(p + "mlp_in.bias", b.mlp_in_bias);
      f(p + "mlp_out.weight", b.mlp_out_weight);
      f(p + "mlp_out.bias", b.mlp_out_bias);
    }
    f("final_norm.gain", self.final_norm_gain);
    f("final_norm.bias", self.final_norm_bias);
    f("up.weight", self.up_weight);
    f("up.bias", self.up_bias);
    f("output.weight", self.output_weight);
    f("output.bias", self.output_bias);
  }
};

// Parameters bound as tape variables for one forward pass.
template <typename T>
struct ParameterVars {
  std::vector<ad::Var<T>> vars;  // ForEach order

  static ParameterVars Bind(ad::Tape<T>& tape, const ModelParameters<T>& params, bool trainable);
  // Gradients of the last Backward() in the parameters' layout.
  ModelParameters<T> Gradients(const ad::Tape<T>& tape, const ModelParameters<T>& like) const;
};

// Color/structure ids of the positions fed to the network.
struct ModelInput {
  const TokenGrid* color = nullptr;
  const TokenGrid* structure = nullptr;
  // Per-position multiplier on the structure embedding (1 keeps, 0 drops).
  // Empty means keep everything.
  std::vector<float> structure_keep;
};

// Window groups over a frames x rows x cols token grid, positions in
// (frame, row, col) raster order.
ad::WindowPartition SpatialPartition(std::size_t frames, std::size_t rows, std::size_t cols);
ad::WindowPartition TubePartition(std::size_t frames, std::size_t rows, std::size_t cols,
                                  std::size_t window_rows, std::size_t window_cols);
ad::WindowPartition GlobalPartition(std::size_t tokens);

// X = e^c(Z^c) + keep * e^s(Z^s) + P^S + P^T as an (N*h*w) x c variable.
template <typename T>
ad::Var<T> Embed(ad::Tape<T>& tape, const ParameterVars<T>& vars, const ModelConfig& config,
                 const ModelInput& input);

// Plain-tensor convenience wrapper around Embed.
template <typename T>
Tensor<T> EmbedValues(const ModelParameters<T>& params, const ModelConfig& config,
                      const ModelInput& input);

// One residual attention sub-layer: x + proj(attn(norm(x))).
template <typename T>
ad::Var<T> AttentionLayer(ad::Tape<T>& tape, const ParameterVars<T>& vars,
                          const ModelConfig& config, std::size_t layer, ad::Var<T> x,
                          const ad::WindowPartition& partition);

// Partition for a layer over a frames x grid_rows x grid_cols grid.
ad::WindowPartition LayerPartition(const ModelConfig& config, AttentionKind kind,
                                   std::size_t frames);

// Full network: logits over the color vocabulary, (N*h*w) x M_c.
template <typename T>
ad::Var<T> Forward(ad::Tape<T>& tape, const ParameterVars<T>& vars, const ModelConfig& config,
                   const ModelInput& input);

template <typename T>
Tensor<T> Logits(const ModelParameters<T>& params, const ModelConfig& config,
                 const ModelInput& input);

// Softmax(Q [K_1; ...; K_m]^T / sqrt(head_dim)) [V_1; ...; V_m] for one
// frame's queries over the concatenated keys/values of the given frames.
// `weights`, when set, receives the attention matrix.
template <typename T>
Tensor<T> JointKeyframeAttention(const Tensor<T>& queries, std::span<const Tensor<T>> keys,
                                 std::span<const Tensor<T>> values, std::size_t head_dim,
                                 Tensor<T>* weights = nullptr);

// Multiplies in the score matrices (Q K^T) of one attention layer over the
// given partition, summed over heads: sum over groups of |group|^2 * c.
std::uint64_t ScoreMultiplies(const ad::WindowPartition& partition, std::size_t embed_dim);

// Closed forms for a frames x rows x cols grid.
std::uint64_t TubeScoreMultiplies(std::size_t frames, std::size_t rows, std::size_t cols,
                                  std::size_t window_rows, std::size_t window_cols,
                                  std::size_t embed_dim);
std::uint64_t GlobalScoreMultiplies(std::size_t frames, std::size_t rows, std::size_t cols,
                                    std::size_t embed_dim);

}  // namespace maskint
