#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "maskint/autodiff.hpp"
#include "maskint/kernels.hpp"

namespace maskint::ad {
namespace {

thread_local AttentionCounter* g_attention_counter = nullptr;

template <typename T>
void RequireSameTape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape || a.tape == nullptr) {
    throw ContractError("operands recorded on different tapes");
  }
}

template <typename T>
void RequireRank2(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) {
    throw GeometryError(std::string(what) + ": expected a matrix, got " +
                        ShapeString(t.shape()));
  }
}

template <typename T>
void AddInto(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

template <typename T>
std::array<Var<T>, 1> In(Var<T> a) {
  return {a};
}
template <typename T>
std::array<Var<T>, 2> In(Var<T> a, Var<T> b) {
  return {a, b};
}
template <typename T>
std::array<Var<T>, 3> In(Var<T> a, Var<T> b, Var<T> c) {
  return {a, b, c};
}

template <typename T>
T GeluValue(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T GeluDerivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

// Softmax of a strided slice in place.
template <typename T>
void SoftmaxSlice(T* x, std::size_t len, std::size_t stride) {
  T top = x[0];
  for (std::size_t i = 1; i < len; ++i) top = std::max(top, x[i * stride]);
  T total = 0;
  for (std::size_t i = 0; i < len; ++i) {
    T& v = x[i * stride];
    v = std::exp(v - top);
    total += v;
  }
  for (std::size_t i = 0; i < len; ++i) x[i * stride] /= total;
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit SplitAxis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw GeometryError("softmax: axis " + std::to_string(axis) + " out of range for " +
                        ShapeString(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Gathers padded kernel patches: cols[F*Ho*Wo x K*K*C].
template <typename T>
void Im2Col(const T* x, T* cols, const ConvGeometry& g, std::size_t channels) {
  const std::size_t ho = g.DownHeight(), wo = g.DownWidth();
  const std::size_t patch = g.kernel * g.kernel * channels;
  for (std::size_t f = 0; f < g.frames; ++f) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T* dst = cols + ((f * ho + oy) * wo + ox) * patch;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            T* cell = dst + (ky * g.kernel + kx) * channels;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                ix >= static_cast<long>(g.width)) {
              std::fill(cell, cell + channels, T{0});
              continue;
            }
            const T* src = x + ((f * g.height + iy) * g.width + ix) * channels;
            std::copy(src, src + channels, cell);
          }
        }
      }
    }
  }
}

// Adjoint of Im2Col: scatter-adds patch columns back onto the image.
template <typename T>
void Col2Im(const T* cols, T* x, const ConvGeometry& g, std::size_t channels) {
  const std::size_t ho = g.DownHeight(), wo = g.DownWidth();
  const std::size_t patch = g.kernel * g.kernel * channels;
  for (std::size_t f = 0; f < g.frames; ++f) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const T* src = cols + ((f * ho + oy) * wo + ox) * patch;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            const T* cell = src + (ky * g.kernel + kx) * channels;
            T* dst = x + ((f * g.height + iy) * g.width + ix) * channels;
            for (std::size_t c = 0; c < channels; ++c) dst[c] += cell[c];
          }
        }
      }
    }
  }
}

template <typename T>
void ValidatePartition(const WindowPartition& p, std::size_t tokens) {
  if (p.tokens != tokens) {
    throw GeometryError("window attention: partition covers " + std::to_string(p.tokens) +
                        " tokens, input has " + std::to_string(tokens));
  }
  std::vector<char> seen(tokens, 0);
  std::size_t covered = 0;
  for (const auto& group : p.groups) {
    for (std::uint32_t t : group) {
      if (t >= tokens || seen[t]) {
        throw GeometryError("window attention: partition is not a disjoint cover");
      }
      seen[t] = 1;
      ++covered;
    }
  }
  if (covered != tokens) throw GeometryError("window attention: partition misses tokens");
}

}  // namespace

ScopedAttentionCounter::ScopedAttentionCounter(AttentionCounter* counter)
    : previous_(g_attention_counter) {
  g_attention_counter = counter;
}

ScopedAttentionCounter::~ScopedAttentionCounter() { g_attention_counter = previous_; }

AttentionCounter* CurrentAttentionCounter() { return g_attention_counter; }

template <typename T>
Tensor<T> MatMulValues(const Tensor<T>& a, const Tensor<T>& b) {
  RequireRank2(a, "matmul");
  RequireRank2(b, "matmul");
  if (a.extent(1) != b.extent(0)) {
    throw GeometryError("matmul: inner extents differ: " + ShapeString(a.shape()) + " * " +
                        ShapeString(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<T> c({m, n});
  kernels::GemmAccumulate(a.data(), b.data(), c.data(), m, k, n);
  return c;
}

template <typename T>
Var<T> MatMul(Var<T> a, Var<T> b) {
  RequireSameTape(a, b);
  Tensor<T> out = MatMulValues(a.value(), b.value());
  const std::uint32_t ia = a.id, ib = b.id;
  return a.tape->Record(std::move(out), In(a, b), [ia, ib](Tape<T>& tape, std::uint32_t self) {
    const Tensor<T>& av = tape.value(ia);
    const Tensor<T>& bv = tape.value(ib);
    const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
    const Tensor<T>& dc = tape.GradBuffer(self);
    if (tape.requires_grad(ia)) {
      std::vector<T> bt(k * n);
      kernels::Transpose(bv.data(), bt.data(), k, n);
      kernels::GemmAccumulate(dc.data(), bt.data(), tape.GradBuffer(ia).data(), m, n, k);
    }
    if (tape.requires_grad(ib)) {
      std::vector<T> at(m * k);
      kernels::Transpose(av.data(), at.data(), m, k);
      kernels::GemmAccumulate(at.data(), dc.data(), tape.GradBuffer(ib).data(), k, m, n);
    }
  });
}

template <typename T>
Var<T> Add(Var<T> a, Var<T> b) {
  RequireSameTape(a, b);
  RequireShape(b.shape(), a.shape(), "add");
  Tensor<T> out = a.value();
  AddInto(out, b.value());
  const std::uint32_t ia = a.id, ib = b.id;
  return a.tape->Record(std::move(out), In(a, b), [ia, ib](Tape<T>& tape, std::uint32_t self) {
    const Tensor<T>& g = tape.GradBuffer(self);
    if (tape.requires_grad(ia)) AddInto(tape.GradBuffer(ia), g);
    if (tape.requires_grad(ib)) AddInto(tape.GradBuffer(ib), g);
  });
}

template <typename T>
Var<T> AddBias(Var<T> x, Var<T> bias) {
  RequireSameTape(x, bias);
  const Tensor<T>& xv = x.value();
  if (bias.value().size() != xv.cols()) {
    throw GeometryError("add_bias: bias " + ShapeString(bias.shape()) + " vs rows of " +
                        ShapeString(xv.shape()));
  }
  Tensor<T> out = xv;
  const std::size_t rows = xv.rows(), cols = xv.cols();
  const T* b = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T* o = out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] += b[c];
  }
  const std::uint32_t ix = x.id, ibias = bias.id;
  return x.tape->Record(std::move(out), In(x, bias),
                        [ix, ibias, rows, cols](Tape<T>& tape, std::uint32_t self) {
                          const Tensor<T>& g = tape.GradBuffer(self);
                          if (tape.requires_grad(ix)) AddInto(tape.GradBuffer(ix), g);
                          if (tape.requires_grad(ibias)) {
                            T* db = tape.GradBuffer(ibias).data();
                            for (std::size_t r = 0; r < rows; ++r) {
                              const T* gr = g.data() + r * cols;
                              for (std::size_t c = 0; c < cols; ++c) db[c] += gr[c];
                            }
                          }
                        });
}

template <typename T>
Var<T> Mul(Var<T> a, Var<T> b) {
  RequireSameTape(a, b);
  RequireShape(b.shape(), a.shape(), "mul");
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::uint32_t ia = a.id, ib = b.id;
  return a.tape->Record(std::move(out), In(a, b), [ia, ib](Tape<T>& tape, std::uint32_t self) {
    const Tensor<T>& g = tape.GradBuffer(self);
    if (tape.requires_grad(ia)) {
      Tensor<T>& da = tape.GradBuffer(ia);
      const T* bv2 = tape.value(ib).data();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv2[i];
    }
    if (tape.requires_grad(ib)) {
      Tensor<T>& db = tape.GradBuffer(ib);
      const T* av = tape.value(ia).data();
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> Scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  const std::uint32_t ia = a.id;
  return a.tape->Record(std::move(out), In(a), [ia, factor](Tape<T>& tape, std::uint32_t self) {
    const Tensor<T>& g = tape.GradBuffer(self);
    Tensor<T>& da = tape.GradBuffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> ScaleRows(Var<T> x, std::vector<T> factors) {
  const Tensor<T>& xv = x.value();
  if (factors.size() != xv.rows()) {
    throw GeometryError("scale_rows: " + std::to_string(factors.size()) + " factors for " +
                        std::to_string(xv.rows()) + " rows");
  }
  Tensor<T> out = xv;
  const std::size_t cols = xv.cols();
  for (std::size_t r = 0; r < factors.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] *= factors[r];
  }
  const std::uint32_t ix = x.id;
  return x.tape->Record(std::move(out), In(x),
                        [ix, cols, f = std::move(factors)](Tape<T>& tape, std::uint32_t self) {
                          const Tensor<T>& g = tape.GradBuffer(self);
                          Tensor<T>& dx = tape.GradBuffer(ix);
                          for (std::size_t r = 0; r < f.size(); ++r) {
                            for (std::size_t c = 0; c < cols; ++c) {
                              dx[r * cols + c] += g[r * cols + c] * f[r];
                            }
                          }
                        });
}

template <typename T>
Var<T> Gelu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = GeluValue(v);
  const std::uint32_t ix = x.id;
  return x.tape->Record(std::move(out), In(x), [ix](Tape<T>& tape, std::uint32_t self) {
    const Tensor<T>& g = tape.GradBuffer(self);
    const Tensor<T>& xv = tape.value(ix);
    Tensor<T>& dx = tape.GradBuffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * GeluDerivative(xv[i]);
  });
}

template <typename T>
Var<T> LayerNorm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  RequireSameTape(x, gain);
  RequireSameTape(x, bias);
  const Tensor<T>& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (gain.value().size() != cols || bias.value().size() != cols) {
    throw GeometryError("layer_norm: gain/bias width differs from " + ShapeString(xv.shape()));
  }
  Tensor<T> out(xv.shape());
  std::vector<T> normalized(xv.size());
  std::vector<T> inv_std(rows);
  const T* gv = gain.value().data();
  const T* bv = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * cols;
    T mean = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(cols);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const T n = (xr[c] - mean) * is;
      normalized[r * cols + c] = n;
      out[r * cols + c] = n * gv[c] + bv[c];
    }
  }
  const std::uint32_t ix = x.id, ig = gain.id, ib = bias.id;
  return x.tape->Record(
      std::move(out), In(x, gain, bias),
      [ix, ig, ib, rows, cols, xhat = std::move(normalized), inv_std = std::move(inv_std)](
          Tape<T>& tape, std::uint32_t self) {
        const Tensor<T>& g = tape.GradBuffer(self);
        if (tape.requires_grad(ig) || tape.requires_grad(ib)) {
          T* dg = tape.requires_grad(ig) ? tape.GradBuffer(ig).data() : nullptr;
          T* db = tape.requires_grad(ib) ? tape.GradBuffer(ib).data() : nullptr;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
              const T gy = g[r * cols + c];
              if (dg) dg[c] += gy * xhat[r * cols + c];
              if (db) db[c] += gy;
            }
          }
        }
        if (tape.requires_grad(ix)) {
          const T* gv2 = tape.value(ig).data();
          Tensor<T>& dx = tape.GradBuffer(ix);
          std::vector<T> dn(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dn = 0, mean_dn_x = 0;
            for (std::size_t c = 0; c < cols; ++c) {
              dn[c] = g[r * cols + c] * gv2[c];
              mean_dn += dn[c];
              mean_dn_x += dn[c] * xhat[r * cols + c];
            }
            mean_dn /= static_cast<T>(cols);
            mean_dn_x /= static_cast<T>(cols);
            for (std::size_t c = 0; c < cols; ++c) {
              dx[r * cols + c] +=
                  inv_std[r] * (dn[c] - mean_dn - xhat[r * cols + c] * mean_dn_x);
            }
          }
        }
      });
}

template <typename T>
Var<T> Embedding(Var<T> table, std::vector<std::int32_t> ids) {
  const Tensor<T>& tv = table.value();
  RequireRank2(tv, "embedding");
  const std::size_t vocab = tv.extent(0), cols = tv.extent(1);
  if (ids.empty()) throw GeometryError("embedding: no ids");
  Tensor<T> out({ids.size(), cols});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(ids[r]) + " outside [0," +
                       std::to_string(vocab) + ")");
    }
    std::copy_n(tv.data() + ids[r] * cols, cols, out.data() + r * cols);
  }
  const std::uint32_t it = table.id;
  return table.tape->Record(std::move(out), In(table),
                            [it, cols, ids = std::move(ids)](Tape<T>& tape, std::uint32_t self) {
                              const Tensor<T>& g = tape.GradBuffer(self);
                              T* dt = tape.GradBuffer(it).data();
                              for (std::size_t r = 0; r < ids.size(); ++r) {
                                T* dst = dt + ids[r] * cols;
                                const T* src = g.data() + r * cols;
                                for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                              }
                            });
}

template <typename T>
Tensor<T> SoftmaxValues(const Tensor<T>& x, std::size_t axis) {
  const AxisSplit s = SplitAxis(x.shape(), axis);
  Tensor<T> out = x;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      SoftmaxSlice(out.data() + o * s.len * s.inner + i, s.len, s.inner);
    }
  }
  return out;
}

template <typename T>
Var<T> Softmax(Var<T> x, std::size_t axis) {
  Tensor<T> out = SoftmaxValues(x.value(), axis);
  const AxisSplit s = SplitAxis(x.shape(), axis);
  const std::uint32_t ix = x.id;
  return x.tape->Record(std::move(out), In(x), [ix, s](Tape<T>& tape, std::uint32_t self) {
    const Tensor<T>& g = tape.GradBuffer(self);
    const Tensor<T>& y = tape.value(self);
    Tensor<T>& dx = tape.GradBuffer(ix);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        T dot = 0;
        for (std::size_t l = 0; l < s.len; ++l) dot += g[base + l * s.inner] * y[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t at = base + l * s.inner;
          dx[at] += y[at] * (g[at] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> Sum(Var<T> x) {
  T total = 0;
  for (T v : x.value().values()) total += v;
  const std::uint32_t ix = x.id;
  return x.tape->Record(Tensor<T>::Scalar(total), In(x), [ix](Tape<T>& tape, std::uint32_t self) {
    const T g = tape.GradBuffer(self)[0];
    for (auto& v : tape.GradBuffer(ix).values()) v += g;
  });
}

template <typename T>
T CrossEntropyValue(std::span<const T> logits, std::int32_t target) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) {
    throw IndexError("cross_entropy: target " + std::to_string(target) + " outside [0," +
                     std::to_string(logits.size()) + ")");
  }
  T top = logits[0];
  for (T v : logits) top = std::max(top, v);
  T total = 0;
  for (T v : logits) total += std::exp(v - top);
  return std::log(total) + top - logits[target];
}

template <typename T>
Var<T> CrossEntropy(Var<T> logits, std::vector<std::uint32_t> rows,
                    std::vector<std::int32_t> targets) {
  const Tensor<T>& lv = logits.value();
  RequireRank2(lv, "cross_entropy");
  if (rows.empty()) throw ContractError("cross_entropy: no rows selected");
  if (rows.size() != targets.size()) {
    throw GeometryError("cross_entropy: rows and targets differ in length");
  }
  const std::size_t width = lv.cols();
  std::vector<T> probs(rows.size() * width);
  T total = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= lv.rows()) {
      throw IndexError("cross_entropy: row " + std::to_string(rows[i]) + " out of range");
    }
    auto row = lv.row(rows[i]);
    total += CrossEntropyValue<T>(row, targets[i]);
    std::copy(row.begin(), row.end(), probs.begin() + i * width);
    SoftmaxSlice(probs.data() + i * width, width, 1);
  }
  const T mean = total / static_cast<T>(rows.size());
  const std::uint32_t il = logits.id;
  return logits.tape->Record(
      Tensor<T>::Scalar(mean), In(logits),
      [il, width, rows = std::move(rows), targets = std::move(targets), probs = std::move(probs)](
          Tape<T>& tape, std::uint32_t self) {
        const T g = tape.GradBuffer(self)[0] / static_cast<T>(rows.size());
        Tensor<T>& dl = tape.GradBuffer(il);
        for (std::size_t i = 0; i < rows.size(); ++i) {
          T* dst = dl.data() + rows[i] * width;
          const T* p = probs.data() + i * width;
          for (std::size_t c = 0; c < width; ++c) dst[c] += g * p[c];
          dst[targets[i]] -= g;
        }
      });
}

template <typename T>
Var<T> Conv2d(Var<T> x, Var<T> weight, Var<T> bias, const ConvGeometry& geom) {
  RequireSameTape(x, weight);
  RequireSameTape(x, bias);
  const Tensor<T>& xv = x.value();
  const std::size_t cin = xv.cols();
  if (xv.rows() != geom.frames * geom.height * geom.width) {
    throw GeometryError("conv2d: input rows do not match geometry");
  }
  const std::size_t patch = geom.kernel * geom.kernel * cin;
  const Tensor<T>& wv = weight.value();
  if (wv.rank() != 2 || wv.extent(0) != patch) {
    throw GeometryError("conv2d: weight " + ShapeString(wv.shape()) + " does not match kernel");
  }
  const std::size_t cout = wv.extent(1);
  if (bias.value().size() != cout) throw GeometryError("conv2d: bias width");
  const std::size_t out_rows = geom.frames * geom.DownHeight() * geom.DownWidth();
  std::vector<T> cols(out_rows * patch);
  Im2Col(xv.data(), cols.data(), geom, cin);
  Tensor<T> out({out_rows, cout});
  kernels::GemmAccumulate(cols.data(), wv.data(), out.data(), out_rows, patch, cout);
  const T* bv = bias.value().data();
  for (std::size_t r = 0; r < out_rows; ++r) {
    for (std::size_t c = 0; c < cout; ++c) out[r * cout + c] += bv[c];
  }
  const std::uint32_t ix = x.id, iw = weight.id, ib = bias.id;
  return x.tape->Record(
      std::move(out), In(x, weight, bias),
      [ix, iw, ib, geom, cin, cout, patch, out_rows, cols = std::move(cols)](
          Tape<T>& tape, std::uint32_t self) {
        const Tensor<T>& g = tape.GradBuffer(self);
        if (tape.requires_grad(ib)) {
          T* db = tape.GradBuffer(ib).data();
          for (std::size_t r = 0; r < out_rows; ++r) {
            for (std::size_t c = 0; c < cout; ++c) db[c] += g[r * cout + c];
          }
        }
        if (tape.requires_grad(iw)) {
          std::vector<T> cols_t(cols.size());
          kernels::Transpose(cols.data(), cols_t.data(), out_rows, patch);
          kernels::GemmAccumulate(cols_t.data(), g.data(), tape.GradBuffer(iw).data(), patch,
                                  out_rows, cout);
        }
        if (tape.requires_grad(ix)) {
          const Tensor<T>& wv2 = tape.value(iw);
          std::vector<T> w_t(wv2.size());
          kernels::Transpose(wv2.data(), w_t.data(), patch, cout);
          std::vector<T> dcols(out_rows * patch, T{0});
          kernels::GemmAccumulate(g.data(), w_t.data(), dcols.data(), out_rows, cout, patch);
          Col2Im(dcols.data(), tape.GradBuffer(ix).data(), geom, cin);
        }
      });
}

template <typename T>
Var<T> ConvTranspose2d(Var<T> x, Var<T> weight, Var<T> bias, const ConvGeometry& geom) {
  RequireSameTape(x, weight);
  RequireSameTape(x, bias);
  const Tensor<T>& xv = x.value();
  const std::size_t in_rows = geom.frames * geom.height * geom.width;
  if (xv.rows() != in_rows) {
    throw GeometryError("conv_transpose2d: input rows do not match geometry");
  }
  const std::size_t cin = xv.cols();
  const Tensor<T>& wv = weight.value();
  const std::size_t taps = geom.kernel * geom.kernel;
  if (wv.rank() != 2 || wv.extent(0) != cin || wv.extent(1) % taps != 0) {
    throw GeometryError("conv_transpose2d: weight " + ShapeString(wv.shape()) +
                        " does not match kernel");
  }
  const std::size_t cout = wv.extent(1) / taps;
  if (bias.value().size() != cout) throw GeometryError("conv_transpose2d: bias width");
  // The transposed convolution is the adjoint of a strided convolution whose
  // input is the upsampled grid.
  ConvGeometry up = geom;
  up.height = geom.UpHeight();
  up.width = geom.UpWidth();
  if (up.DownHeight() != geom.height || up.DownWidth() != geom.width) {
    throw GeometryError("conv_transpose2d: inconsistent output padding");
  }
  const std::size_t patch = taps * cout;
  const std::size_t out_rows = geom.frames * up.height * up.width;
  std::vector<T> cols(in_rows * patch, T{0});
  kernels::GemmAccumulate(xv.data(), wv.data(), cols.data(), in_rows, cin, patch);
  Tensor<T> out({out_rows, cout});
  Col2Im(cols.data(), out.data(), up, cout);
  const T* bv = bias.value().data();
  for (std::size_t r = 0; r < out_rows; ++r) {
    for (std::size_t c = 0; c < cout; ++c) out[r * cout + c] += bv[c];
  }
  const std::uint32_t ix = x.id, iw = weight.id, ib = bias.id;
  return x.tape->Record(
      std::move(out), In(x, weight, bias),
      [ix, iw, ib, up, cin, cout, patch, in_rows, out_rows](Tape<T>& tape, std::uint32_t self) {
        const Tensor<T>& g = tape.GradBuffer(self);
        if (tape.requires_grad(ib)) {
          T* db = tape.GradBuffer(ib).data();
          for (std::size_t r = 0; r < out_rows; ++r) {
            for (std::size_t c = 0; c < cout; ++c) db[c] += g[r * cout + c];
          }
        }
        std::vector<T> dcols(in_rows * patch);
        Im2Col(g.data(), dcols.data(), up, cout);
        if (tape.requires_grad(iw)) {
          const Tensor<T>& xv2 = tape.value(ix);
          std::vector<T> x_t(xv2.size());
          kernels::Transpose(xv2.data(), x_t.data(), in_rows, cin);
          kernels::GemmAccumulate(x_t.data(), dcols.data(), tape.GradBuffer(iw).data(), cin,
                                  in_rows, patch);
        }
        if (tape.requires_grad(ix)) {
          const Tensor<T>& wv2 = tape.value(iw);
          std::vector<T> w_t(wv2.size());
          kernels::Transpose(wv2.data(), w_t.data(), cin, patch);
          kernels::GemmAccumulate(dcols.data(), w_t.data(), tape.GradBuffer(ix).data(), in_rows,
                                  patch, cin);
        }
      });
}

template <typename T>
Var<T> WindowAttention(Var<T> qkv, const WindowPartition& partition, std::size_t heads) {
  const Tensor<T>& in = qkv.value();
  RequireRank2(in, "window_attention");
  const std::size_t tokens = in.rows();
  if (in.cols() % 3 != 0) throw GeometryError("window_attention: qkv width not divisible by 3");
  const std::size_t width = in.cols() / 3;
  if (heads == 0 || width % heads != 0) {
    throw GeometryError("window_attention: width " + std::to_string(width) +
                        " not divisible by " + std::to_string(heads) + " heads");
  }
  ValidatePartition<T>(partition, tokens);
  const std::size_t dh = width / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const std::size_t stride = in.cols();

  Tensor<T> out({tokens, width});
  std::vector<T> probs;
  std::vector<std::size_t> offsets;
  std::vector<T> q, kt, v, o;
  AttentionCounter* counter = g_attention_counter;
  for (const auto& group : partition.groups) {
    const std::size_t s = group.size();
    q.resize(s * dh);
    kt.resize(dh * s);
    v.resize(s * dh);
    o.resize(s * dh);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < s; ++i) {
        const T* row = in.data() + group[i] * stride;
        for (std::size_t d = 0; d < dh; ++d) {
          q[i * dh + d] = row[h * dh + d];
          kt[d * s + i] = row[width + h * dh + d];
          v[i * dh + d] = row[2 * width + h * dh + d];
        }
      }
      offsets.push_back(probs.size());
      probs.resize(probs.size() + s * s, T{0});
      T* p = probs.data() + offsets.back();
      kernels::GemmAccumulate(q.data(), kt.data(), p, s, dh, s);
      for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t j = 0; j < s; ++j) p[i * s + j] *= scale;
        SoftmaxSlice(p + i * s, s, 1);
      }
      std::fill(o.begin(), o.end(), T{0});
      kernels::GemmAccumulate(p, v.data(), o.data(), s, s, dh);
      if (counter) {
        counter->score_multiplies += static_cast<std::uint64_t>(s) * s * dh;
        counter->value_multiplies += static_cast<std::uint64_t>(s) * s * dh;
      }
      for (std::size_t i = 0; i < s; ++i) {
        std::copy_n(o.data() + i * dh, dh, out.data() + group[i] * width + h * dh);
      }
    }
  }

  const std::uint32_t iq = qkv.id;
  return qkv.tape->Record(
      std::move(out), In(qkv),
      [iq, partition, heads, dh, width, stride, scale, probs = std::move(probs),
       offsets = std::move(offsets)](Tape<T>& tape, std::uint32_t self) {
        const Tensor<T>& g = tape.GradBuffer(self);
        const Tensor<T>& in2 = tape.value(iq);
        Tensor<T>& din = tape.GradBuffer(iq);
        std::vector<T> q, k, v, vt, go, pt, dp, ds, dst, dq, dk, dv;
        std::size_t slot = 0;
        for (const auto& group : partition.groups) {
          const std::size_t s = group.size();
          q.resize(s * dh);
          k.resize(s * dh);
          v.resize(s * dh);
          vt.resize(dh * s);
          go.resize(s * dh);
          pt.resize(s * s);
          dp.resize(s * s);
          ds.resize(s * s);
          dst.resize(s * s);
          for (std::size_t h = 0; h < heads; ++h, ++slot) {
            const T* p = probs.data() + offsets[slot];
            for (std::size_t i = 0; i < s; ++i) {
              const T* row = in2.data() + group[i] * stride;
              const T* grow = g.data() + group[i] * width;
              for (std::size_t d = 0; d < dh; ++d) {
                q[i * dh + d] = row[h * dh + d];
                k[i * dh + d] = row[width + h * dh + d];
                v[i * dh + d] = row[2 * width + h * dh + d];
                vt[d * s + i] = v[i * dh + d];
                go[i * dh + d] = grow[h * dh + d];
              }
            }
            kernels::Transpose(p, pt.data(), s, s);
            dv.assign(s * dh, T{0});
            kernels::GemmAccumulate(pt.data(), go.data(), dv.data(), s, s, dh);
            std::fill(dp.begin(), dp.end(), T{0});
            kernels::GemmAccumulate(go.data(), vt.data(), dp.data(), s, dh, s);
            for (std::size_t i = 0; i < s; ++i) {
              T dot = 0;
              for (std::size_t j = 0; j < s; ++j) dot += dp[i * s + j] * p[i * s + j];
              for (std::size_t j = 0; j < s; ++j) {
                ds[i * s + j] = p[i * s + j] * (dp[i * s + j] - dot) * scale;
              }
            }
            dq.assign(s * dh, T{0});
            kernels::GemmAccumulate(ds.data(), k.data(), dq.data(), s, s, dh);
            kernels::Transpose(ds.data(), dst.data(), s, s);
            dk.assign(s * dh, T{0});
            kernels::GemmAccumulate(dst.data(), q.data(), dk.data(), s, s, dh);
            for (std::size_t i = 0; i < s; ++i) {
              T* drow = din.data() + group[i] * stride;
              for (std::size_t d = 0; d < dh; ++d) {
                drow[h * dh + d] += dq[i * dh + d];
                drow[width + h * dh + d] += dk[i * dh + d];
                drow[2 * width + h * dh + d] += dv[i * dh + d];
              }
            }
          }
        }
      });
}

#define MASKINT_INSTANTIATE_OPS(T)                                                         \
  template Tensor<T> MatMulValues(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> SoftmaxValues(const Tensor<T>&, std::size_t);                         \
  template T CrossEntropyValue(std::span<const T>, std::int32_t);                          \
  template Var<T> MatMul(Var<T>, Var<T>);                                                  \
  template Var<T> Add(Var<T>, Var<T>);                                                     \
  template Var<T> AddBias(Var<T>, Var<T>);                                                 \
  template Var<T> Mul(Var<T>, Var<T>);                                                     \
  template Var<T> Scale(Var<T>, T);                                                        \
  template Var<T> ScaleRows(Var<T>, std::vector<T>);                                       \
  template Var<T> Gelu(Var<T>);                                                            \
  template Var<T> LayerNorm(Var<T>, Var<T>, Var<T>, T);                                    \
  template Var<T> Embedding(Var<T>, std::vector<std::int32_t>);                            \
  template Var<T> Softmax(Var<T>, std::size_t);                                            \
  template Var<T> Sum(Var<T>);                                                             \
  template Var<T> CrossEntropy(Var<T>, std::vector<std::uint32_t>, std::vector<std::int32_t>); \
  template Var<T> Conv2d(Var<T>, Var<T>, Var<T>, const ConvGeometry&);                     \
  template Var<T> ConvTranspose2d(Var<T>, Var<T>, Var<T>, const ConvGeometry&);            \
  template Var<T> WindowAttention(Var<T>, const WindowPartition&, std::size_t);

MASKINT_INSTANTIATE_OPS(float)
MASKINT_INSTANTIATE_OPS(double)

#undef MASKINT_INSTANTIATE_OPS

}  // namespace maskint::ad
