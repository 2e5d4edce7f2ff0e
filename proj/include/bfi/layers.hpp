#pragma once

// Forward and backward kernels: the full cross layer, the blockwise
// interaction layer, dense ReLU layers, the affine head, and softmax
// cross-entropy.
//
// Every backward kernel has an accumulating form (`*_backward_into`) used by
// the model, which sums parameter gradients into caller-owned buffers, and a
// value-returning form that starts from zeros.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "bfi/linalg.hpp"

namespace bfi {

// ---------------------------------------------------------------------------
// Full cross layer: x_next = x0 * (W x_prev + b) + x_prev

template <class T>
struct CrossLayerParams {
  Matrix<T> w;
  Vector<T> b;

  std::size_t dim() const { return b.size(); }
};

template <class T>
struct CrossTape {
  Vector<T> x0;
  Vector<T> x_prev;
  Vector<T> z;  // W x_prev + b
};

template <class T>
struct CrossGrads {
  Matrix<T> w;
  Vector<T> b;
  Vector<T> x_prev;
  Vector<T> x0;
};

namespace detail {

template <class T>
void check_square(const Matrix<T>& w, const Vector<T>& b, const char* what) {
  if (w.rows() != w.cols() || b.size() != w.rows())
    fail(what, ": weight ", shape_of(w), " with bias ", b.size());
}

}  // namespace detail

template <class T>
std::pair<Vector<T>, CrossTape<T>> cross_forward(const CrossLayerParams<T>& p,
                                                 const Vector<T>& x0,
                                                 const Vector<T>& x_prev) {
  detail::check_square(p.w, p.b, "cross_forward");
  const std::size_t d = p.dim();
  if (x0.size() != d || x_prev.size() != d)
    detail::fail("cross_forward: layer width ", d, ", x0 ", x0.size(),
                 ", x_prev ", x_prev.size());
  CrossTape<T> tape{x0, x_prev, Vector<T>(d)};
  matvec_into<T>(p.w, x_prev.span(), tape.z.span());
  Vector<T> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    tape.z[i] += p.b[i];
    out[i] = x0[i] * tape.z[i] + x_prev[i];
  }
  return {std::move(out), std::move(tape)};
}

/// Adds dL/dW and dL/db into `acc_w`, `acc_b`; adds the x0 path into
/// `grad_x0`; returns dL/dx_prev (residual plus weight path).
template <class T>
Vector<T> cross_backward_into(const CrossLayerParams<T>& p,
                              const CrossTape<T>& tape,
                              const Vector<T>& grad_out, Matrix<T>& acc_w,
                              Vector<T>& acc_b, Vector<T>& grad_x0) {
  const std::size_t d = p.dim();
  if (grad_out.size() != d || tape.z.size() != d || grad_x0.size() != d ||
      acc_b.size() != d)
    detail::fail("cross_backward: layer width ", d, ", grad_out ",
                 grad_out.size(), ", tape ", tape.z.size());
  Vector<T> gz(d);
  for (std::size_t i = 0; i < d; ++i) {
    gz[i] = grad_out[i] * tape.x0[i];
    grad_x0[i] += grad_out[i] * tape.z[i];
    acc_b[i] += gz[i];
  }
  outer_add<T>(gz.span(), tape.x_prev.span(), acc_w);
  Vector<T> gx = grad_out;
  matvec_transposed_add<T>(p.w, gz.span(), gx.span());
  return gx;
}

template <class T>
CrossGrads<T> cross_backward(const CrossLayerParams<T>& p,
                             const CrossTape<T>& tape,
                             const Vector<T>& grad_out) {
  const std::size_t d = p.dim();
  CrossGrads<T> g{Matrix<T>(d, d), Vector<T>(d), {}, Vector<T>(d)};
  g.x_prev = cross_backward_into(p, tape, grad_out, g.w, g.b, g.x0);
  return g;
}

// ---------------------------------------------------------------------------
// Blockwise interaction layer

template <class T>
struct AffineBlock {
  Matrix<T> w;
  Vector<T> b;

  bool operator==(const AffineBlock&) const = default;
};

/// K affine blocks of width d over a (padded) vector of width K*d. When
/// `shared` is set, `blocks` holds exactly one block that every partition
/// uses. `perm`, when present, shuffles x_prev before the split.
template <class T>
struct BlockwiseLayerParams {
  std::size_t k = 1;
  std::vector<AffineBlock<T>> blocks;
  bool shared = false;
  std::optional<Permutation> perm;

  const AffineBlock<T>& block(std::size_t i) const {
    return shared ? blocks.front() : blocks[i];
  }
  std::size_t block_dim() const { return blocks.front().b.size(); }
  std::size_t dim() const { return k * block_dim(); }

  void validate() const {
    if (k == 0) detail::fail("blockwise layer: K must be >= 1");
    if (blocks.size() != (shared ? 1 : k))
      detail::fail("blockwise layer: ", blocks.size(), " blocks for K=", k,
                   shared ? " (shared)" : "");
    const std::size_t d = block_dim();
    for (const auto& blk : blocks) {
      detail::check_square(blk.w, blk.b, "blockwise layer");
      if (blk.b.size() != d)
        detail::fail("blockwise layer: block widths ", blk.b.size(), " vs ", d);
    }
    if (perm && perm->size() != dim())
      detail::fail("blockwise layer: permutation ", perm->size(),
                   " vs width ", dim());
  }
};

template <class T>
struct BlockwiseTape {
  Vector<T> x0;
  Vector<T> y;  // shuffled x_prev
  Vector<T> z;  // concatenated block outputs, shuffled order
};

template <class T>
struct BlockwiseGrads {
  std::vector<AffineBlock<T>> blocks;
  Vector<T> x_prev;
  Vector<T> x0;
};

/// Shuffles (when `perm` is given) and cuts `x` into `k` contiguous blocks.
template <class T>
std::vector<Vector<T>> shuffle_split(const Vector<T>& x, std::size_t k,
                                     const std::optional<Permutation>& perm) {
  if (k == 0 || k > x.size())
    detail::fail("shuffle_split: K=", k, " for width ", x.size());
  if (x.size() % k != 0)
    detail::fail("shuffle_split: width ", x.size(), " not divisible by K=", k,
                 " (pad first)");
  const Vector<T> y = perm ? apply_permutation(*perm, x) : x;
  const std::size_t d = x.size() / k;
  std::vector<Vector<T>> parts;
  parts.reserve(k);
  for (std::size_t i = 0; i < k; ++i)
    parts.emplace_back(std::vector<T>(y.begin() + i * d, y.begin() + (i + 1) * d));
  return parts;
}

/// The concatenation stays in shuffled order and multiplies the unshuffled
/// x0 directly.
template <class T>
std::pair<Vector<T>, BlockwiseTape<T>> bfi_forward(
    const BlockwiseLayerParams<T>& p, const Vector<T>& x0,
    const Vector<T>& x_prev) {
  p.validate();
  const std::size_t width = p.dim();
  if (x0.size() != width || x_prev.size() != width)
    detail::fail("bfi_forward: layer width ", width, ", x0 ", x0.size(),
                 ", x_prev ", x_prev.size());
  const std::size_t d = p.block_dim();
  BlockwiseTape<T> tape{x0, p.perm ? apply_permutation(*p.perm, x_prev) : x_prev,
                        Vector<T>(width)};
  for (std::size_t i = 0; i < p.k; ++i) {
    const auto& blk = p.block(i);
    std::span<const T> yi = tape.y.span().subspan(i * d, d);
    std::span<T> zi = tape.z.span().subspan(i * d, d);
    matvec_into<T>(blk.w, yi, zi);
    for (std::size_t j = 0; j < d; ++j) zi[j] += blk.b[j];
  }
  Vector<T> out(width);
  for (std::size_t i = 0; i < width; ++i)
    out[i] = x0[i] * tape.z[i] + x_prev[i];
  return {std::move(out), std::move(tape)};
}

/// Accumulates into `acc_blocks` (one entry when shared, so every partition
/// sums into it) and `grad_x0`; returns dL/dx_prev with the shuffle undone.
template <class T>
Vector<T> bfi_backward_into(const BlockwiseLayerParams<T>& p,
                            const BlockwiseTape<T>& tape,
                            const Vector<T>& grad_out,
                            std::vector<AffineBlock<T>>& acc_blocks,
                            Vector<T>& grad_x0) {
  const std::size_t width = p.dim();
  if (grad_out.size() != width || tape.z.size() != width ||
      grad_x0.size() != width || acc_blocks.size() != p.blocks.size())
    detail::fail("bfi_backward: layer width ", width, ", grad_out ",
                 grad_out.size(), ", tape ", tape.z.size());
  const std::size_t d = p.block_dim();
  Vector<T> gz(width);
  for (std::size_t i = 0; i < width; ++i) {
    gz[i] = grad_out[i] * tape.x0[i];
    grad_x0[i] += grad_out[i] * tape.z[i];
  }
  // The weight path accumulates onto the residual gradient in shuffled
  // coordinates, then scatters back through perm (y[i] = x[perm[i]]). The
  // summation order matches cross_backward_into for any permutation.
  Vector<T> gx = p.perm ? apply_permutation(*p.perm, grad_out) : grad_out;
  for (std::size_t i = 0; i < p.k; ++i) {
    auto& acc = p.shared ? acc_blocks.front() : acc_blocks[i];
    std::span<const T> gzi = gz.span().subspan(i * d, d);
    std::span<const T> yi = tape.y.span().subspan(i * d, d);
    for (std::size_t j = 0; j < d; ++j) acc.b[j] += gzi[j];
    outer_add<T>(gzi, yi, acc.w);
    matvec_transposed_add<T>(p.block(i).w, gzi, gx.span().subspan(i * d, d));
  }
  if (p.perm) gx = apply_permutation(invert_permutation(*p.perm), gx);
  return gx;
}

template <class T>
std::vector<AffineBlock<T>> zero_blocks_like(const BlockwiseLayerParams<T>& p) {
  std::vector<AffineBlock<T>> out;
  out.reserve(p.blocks.size());
  for (const auto& blk : p.blocks)
    out.push_back({Matrix<T>(blk.w.rows(), blk.w.cols()), Vector<T>(blk.b.size())});
  return out;
}

template <class T>
BlockwiseGrads<T> bfi_backward(const BlockwiseLayerParams<T>& p,
                               const BlockwiseTape<T>& tape,
                               const Vector<T>& grad_out) {
  BlockwiseGrads<T> g{zero_blocks_like(p), {}, Vector<T>(p.dim())};
  g.x_prev = bfi_backward_into(p, tape, grad_out, g.blocks, g.x0);
  return g;
}

// ---------------------------------------------------------------------------
// Dense layers

template <class T>
struct DenseLayerParams {
  Matrix<T> w;  // out x in
  Vector<T> b;  // out
};

template <class T>
struct DenseTape {
  Vector<T> x;
  Vector<T> pre;  // W x + b
};

template <class T>
struct DenseGrads {
  Matrix<T> w;
  Vector<T> b;
  Vector<T> x;
};

/// y = W x + b; `relu` clamps at zero.
template <class T>
std::pair<Vector<T>, DenseTape<T>> dense_forward(const DenseLayerParams<T>& p,
                                                 const Vector<T>& x,
                                                 bool relu) {
  if (p.w.cols() != x.size() || p.b.size() != p.w.rows())
    detail::fail("dense_forward: weight ", shape_of(p.w), ", bias ",
                 p.b.size(), ", input ", x.size());
  DenseTape<T> tape{x, Vector<T>(p.w.rows())};
  matvec_into<T>(p.w, x.span(), tape.pre.span());
  Vector<T> y(p.w.rows());
  for (std::size_t i = 0; i < y.size(); ++i) {
    tape.pre[i] += p.b[i];
    y[i] = relu ? std::max(tape.pre[i], T(0)) : tape.pre[i];
  }
  return {std::move(y), std::move(tape)};
}

template <class T>
Vector<T> dense_backward_into(const DenseLayerParams<T>& p,
                              const DenseTape<T>& tape,
                              const Vector<T>& grad_out, bool relu,
                              Matrix<T>& acc_w, Vector<T>& acc_b) {
  if (grad_out.size() != p.w.rows() || tape.pre.size() != p.w.rows() ||
      tape.x.size() != p.w.cols())
    detail::fail("dense_backward: weight ", shape_of(p.w), ", grad_out ",
                 grad_out.size(), ", tape ", tape.pre.size());
  Vector<T> gpre(grad_out.size());
  for (std::size_t i = 0; i < gpre.size(); ++i) {
    // Subgradient at exactly zero is zero.
    gpre[i] = (!relu || tape.pre[i] > T(0)) ? grad_out[i] : T(0);
    acc_b[i] += gpre[i];
  }
  outer_add<T>(gpre.span(), tape.x.span(), acc_w);
  Vector<T> gx(p.w.cols());
  matvec_transposed_add<T>(p.w, gpre.span(), gx.span());
  return gx;
}

template <class T>
std::pair<Vector<T>, DenseTape<T>> dense_relu_forward(
    const DenseLayerParams<T>& p, const Vector<T>& x) {
  return dense_forward(p, x, true);
}

template <class T>
DenseGrads<T> dense_relu_backward(const DenseLayerParams<T>& p,
                                  const DenseTape<T>& tape,
                                  const Vector<T>& grad_out) {
  DenseGrads<T> g{Matrix<T>(p.w.rows(), p.w.cols()), Vector<T>(p.b.size()), {}};
  g.x = dense_backward_into(p, tape, grad_out, true, g.w, g.b);
  return g;
}

// ---------------------------------------------------------------------------
// Loss

template <class T>
struct LossAndGrad {
  T loss;
  Vector<T> grad;
};

template <class T>
Vector<T> softmax(const Vector<T>& logits) {
  if (logits.empty()) detail::fail("softmax: empty logits");
  const T mx = *std::max_element(logits.begin(), logits.end());
  Vector<T> p(logits.size());
  T sum = T(0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

/// -log softmax(logits)[label] via log-sum-exp, and its gradient.
template <class T>
LossAndGrad<T> softmax_xent(const Vector<T>& logits, std::size_t label) {
  if (label >= logits.size())
    detail::fail("softmax_xent: label ", label, " for ", logits.size(),
                 " classes");
  const T mx = *std::max_element(logits.begin(), logits.end());
  T sum = T(0);
  for (T v : logits) sum += std::exp(v - mx);
  const T lse = mx + std::log(sum);
  Vector<T> grad(logits.size());
  for (std::size_t i = 0; i < grad.size(); ++i)
    grad[i] = std::exp(logits[i] - lse);
  grad[label] -= T(1);
  return {lse - logits[label], std::move(grad)};
}

/// Index of the largest logit; ties go to the lowest index.
template <class T>
std::size_t argmax(const Vector<T>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace bfi
