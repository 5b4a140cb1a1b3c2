#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "maskint/tensor.hpp"

namespace maskint::ad {

template <typename T>
class Tape;

// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

// Ordered record of executed primitives. Values live in a deque so references
// handed out by value() stay valid while more nodes are appended.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A leaf that never receives a gradient.
  Var<T> Constant(Tensor<T> value) { return Push(std::move(value), false, {}); }

  // A leaf whose gradient is accumulated by Backward().
  Var<T> Parameter(Tensor<T> value) { return Push(std::move(value), true, {}); }

  // Records the output of a primitive. The backward closure runs only when
  // at least one input requires a gradient.
  Var<T> Record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || nodes_[v.id].requires_grad;
    return Push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  const Tensor<T>& value(std::uint32_t id) const { return nodes_.at(id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }
  bool requires_grad(std::uint32_t id) const { return nodes_.at(id).requires_grad; }

  // Gradient of the last Backward() target with respect to v; zeros when v
  // did not influence the target.
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
  }

  // Mutable gradient buffer, allocated on first use. Used by backward closures.
  Tensor<T>& GradBuffer(std::uint32_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  bool HasGrad(std::uint32_t id) const { return !nodes_.at(id).grad.empty(); }

  // Seeds d(target)/d(target) = 1 and replays the tape in reverse.
  void Backward(Var<T> target) {
    if (target.tape != this) throw ContractError("backward: variable from another tape");
    if (value(target).size() != 1) throw GeometryError("backward: target must be a scalar");
    for (auto& n : nodes_) n.grad = Tensor<T>();
    visits_.clear();
    GradBuffer(target.id)[0] = T{1};
    for (std::uint32_t id = target.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.empty()) continue;
      visits_.push_back(id);
      n.backward(*this, id);
    }
  }

  // Node ids whose backward closure ran in the last Backward(), in visit order.
  const std::vector<std::uint32_t>& last_backward_visits() const { return visits_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> Push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, std::move(fn)});
    return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::deque<Node> nodes_;
  std::vector<std::uint32_t> visits_;
};

// Geometry of a frame stack laid out as [frames*height*width x channels].
struct ConvGeometry {
  std::size_t frames = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;
  std::size_t output_padding = 0;  // transpose only

  std::size_t DownHeight() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t DownWidth() const { return (width + 2 * padding - kernel) / stride + 1; }
  std::size_t UpHeight() const {
    return (height - 1) * stride + kernel + output_padding - 2 * padding;
  }
  std::size_t UpWidth() const {
    return (width - 1) * stride + kernel + output_padding - 2 * padding;
  }
};

// Token groups that attend only among themselves. Every token belongs to
// exactly one group.
struct WindowPartition {
  std::vector<std::vector<std::uint32_t>> groups;
  std::size_t tokens = 0;
};

// Counts multiplies performed by the attention kernels while installed.
struct AttentionCounter {
  std::uint64_t score_multiplies = 0;
  std::uint64_t value_multiplies = 0;
};

// Installs a counter for the current thread for the guard's lifetime.
class ScopedAttentionCounter {
 public:
  explicit ScopedAttentionCounter(AttentionCounter* counter);
  ~ScopedAttentionCounter();
  ScopedAttentionCounter(const ScopedAttentionCounter&) = delete;
  ScopedAttentionCounter& operator=(const ScopedAttentionCounter&) = delete;

 private:
  AttentionCounter* previous_;
};

AttentionCounter* CurrentAttentionCounter();

// ---- primitives --------------------------------------------------------
// All take and return Vars on the same tape. Shapes are checked eagerly.

template <typename T>
Var<T> MatMul(Var<T> a, Var<T> b);

template <typename T>
Var<T> Add(Var<T> a, Var<T> b);

// x[R x C] + bias[C] on every row.
template <typename T>
Var<T> AddBias(Var<T> x, Var<T> bias);

template <typename T>
Var<T> Mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> Scale(Var<T> a, T factor);

// Multiplies row r of x[R x C] by the constant factors[r].
template <typename T>
Var<T> ScaleRows(Var<T> x, std::vector<T> factors);

template <typename T>
Var<T> Gelu(Var<T> x);

// Normalizes each row of x[R x C], then applies gain[C] and bias[C].
template <typename T>
Var<T> LayerNorm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5));

// Rows of table[V x C] selected by ids.
template <typename T>
Var<T> Embedding(Var<T> table, std::vector<std::int32_t> ids);

template <typename T>
Var<T> Softmax(Var<T> x, std::size_t axis);

template <typename T>
Var<T> Sum(Var<T> x);

// Mean over the listed rows of -log softmax(logits[row])[target].
// Rows not listed receive an exactly-zero gradient.
template <typename T>
Var<T> CrossEntropy(Var<T> logits, std::vector<std::uint32_t> rows,
                    std::vector<std::int32_t> targets);

// x[F*H*W x Cin], weight[K*K*Cin x Cout], bias[Cout] -> [F*Ho*Wo x Cout].
template <typename T>
Var<T> Conv2d(Var<T> x, Var<T> weight, Var<T> bias, const ConvGeometry& geom);

// x[F*H*W x Cin], weight[Cin x K*K*Cout], bias[Cout] -> [F*Hu*Wu x Cout].
template <typename T>
Var<T> ConvTranspose2d(Var<T> x, Var<T> weight, Var<T> bias,
                       const ConvGeometry& geom);

// Multi-head attention restricted to partition groups. qkv is
// [tokens x 3C] holding query, key and value projections side by side.
template <typename T>
Var<T> WindowAttention(Var<T> qkv, const WindowPartition& partition,
                       std::size_t heads);

// ---- plain-tensor helpers ----------------------------------------------

template <typename T>
Tensor<T> MatMulValues(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> SoftmaxValues(const Tensor<T>& x, std::size_t axis);

// Single-position cross entropy: -log softmax(logits)[target].
template <typename T>
T CrossEntropyValue(std::span<const T> logits, std::int32_t target);

}  // namespace maskint::ad
