#pragma once

// Classifier assembly: cross or blockwise stack -> L dense ReLU layers ->
// affine class head. Also the closed-form parameter and multiply counts.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bfi/layers.hpp"
#include "bfi/linalg.hpp"

namespace bfi {

enum class VariantKind { Baseline, P, Q, T, S };
enum class ShuffleMode { None, PerLayer, Once };

/// One row of the variant table: P shuffles every layer, Q shuffles the input
/// once; T and S are their weight-sharing counterparts.
struct VariantSpec {
  VariantKind kind = VariantKind::Baseline;

  ShuffleMode shuffle_mode() const {
    switch (kind) {
      case VariantKind::P:
      case VariantKind::T:
        return ShuffleMode::PerLayer;
      case VariantKind::Q:
      case VariantKind::S:
        return ShuffleMode::Once;
      case VariantKind::Baseline:
        break;
    }
    return ShuffleMode::None;
  }
  bool share() const {
    return kind == VariantKind::T || kind == VariantKind::S;
  }
  bool blockwise() const { return kind != VariantKind::Baseline; }

  std::string_view name() const {
    switch (kind) {
      case VariantKind::Baseline: return "Baseline";
      case VariantKind::P: return "P";
      case VariantKind::Q: return "Q";
      case VariantKind::T: return "T";
      case VariantKind::S: return "S";
    }
    return "?";
  }

  static std::optional<VariantSpec> parse(std::string_view s) {
    if (s == "Baseline" || s == "baseline") return VariantSpec{VariantKind::Baseline};
    if (s == "P") return VariantSpec{VariantKind::P};
    if (s == "Q") return VariantSpec{VariantKind::Q};
    if (s == "T") return VariantSpec{VariantKind::T};
    if (s == "S") return VariantSpec{VariantKind::S};
    return std::nullopt;
  }

  static constexpr VariantKind all[] = {VariantKind::Baseline, VariantKind::P,
                                        VariantKind::Q, VariantKind::T,
                                        VariantKind::S};

  bool operator==(const VariantSpec&) const = default;
};

struct ModelConfig {
  std::size_t d = 1;  // raw input features
  std::size_t c = 1;  // cross layers
  std::size_t k = 1;  // block factor, ignored by Baseline
  std::size_t l = 1;  // dense ReLU layers
  std::size_t hidden = 256;
  std::size_t m = 2;  // classes
  VariantSpec variant{};
  std::uint64_t seed = 0;

  void validate() const {
    if (d < 1) detail::fail("ModelConfig: D must be >= 1");
    if (c < 1) detail::fail("ModelConfig: C must be >= 1");
    if (k < 1) detail::fail("ModelConfig: K must be >= 1");
    if (l < 1) detail::fail("ModelConfig: L must be >= 1");
    if (hidden < 1) detail::fail("ModelConfig: hidden must be >= 1");
    if (m < 1) detail::fail("ModelConfig: M must be >= 1");
    if (variant.blockwise() && k > d)
      detail::fail("ModelConfig: K=", k, " exceeds D=", d);
  }

  std::size_t effective_k() const { return variant.blockwise() ? k : 1; }
  /// Width of the cross stack: D rounded up to a multiple of K.
  std::size_t padded_dim() const {
    const std::size_t kk = effective_k();
    return (d + kk - 1) / kk * kk;
  }
  std::size_t block_dim() const { return padded_dim() / effective_k(); }
  /// With K = 1 there is nothing to mix across, so no variant shuffles.
  ShuffleMode shuffle_mode() const {
    return effective_k() > 1 ? variant.shuffle_mode() : ShuffleMode::None;
  }

  bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct ModelParams {
  std::vector<CrossLayerParams<T>> cross;      // Baseline only
  std::vector<BlockwiseLayerParams<T>> bfi;    // P/Q/T/S only
  std::vector<DenseLayerParams<T>> dense;
  DenseLayerParams<T> head;
};

/// Gradients mirror the parameter structure buffer for buffer.
template <class T>
using Gradients = ModelParams<T>;

template <class T>
struct Model {
  ModelConfig config;
  std::optional<Permutation> input_perm;  // Q/S only
  ModelParams<T> params;
};

/// Visits every trainable buffer in a fixed order with a stable name. `P` is
/// ModelParams<T> or const ModelParams<T>.
template <class P, class Fn>
void for_each_buffer(P& params, Fn&& fn) {
  for (std::size_t i = 0; i < params.cross.size(); ++i) {
    const std::string pre = "cross[" + std::to_string(i) + "]";
    fn(pre + ".w", params.cross[i].w.span());
    fn(pre + ".b", params.cross[i].b.span());
  }
  for (std::size_t i = 0; i < params.bfi.size(); ++i) {
    auto& layer = params.bfi[i];
    for (std::size_t j = 0; j < layer.blocks.size(); ++j) {
      const std::string pre =
          "bfi[" + std::to_string(i) + "].block[" + std::to_string(j) + "]";
      fn(pre + ".w", layer.blocks[j].w.span());
      fn(pre + ".b", layer.blocks[j].b.span());
    }
  }
  for (std::size_t i = 0; i < params.dense.size(); ++i) {
    const std::string pre = "dense[" + std::to_string(i) + "]";
    fn(pre + ".w", params.dense[i].w.span());
    fn(pre + ".b", params.dense[i].b.span());
  }
  fn(std::string("head.w"), params.head.w.span());
  fn(std::string("head.b"), params.head.b.span());
}

template <class T>
ModelParams<T> zeros_like(const ModelParams<T>& p) {
  ModelParams<T> z = p;
  for_each_buffer(z, [](const std::string&, std::span<T> buf) {
    std::fill(buf.begin(), buf.end(), T(0));
  });
  return z;
}

/// Copies parameters between precisions, keeping permutations.
template <class U, class T>
Model<U> model_cast(const Model<T>& src) {
  auto mat = [](const Matrix<T>& a) {
    Matrix<U> out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i)
      out.data()[i] = static_cast<U>(a.data()[i]);
    return out;
  };
  auto vec = [](const Vector<T>& a) {
    Vector<U> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<U>(a[i]);
    return out;
  };
  Model<U> dst{src.config, src.input_perm, {}};
  for (const auto& l : src.params.cross) dst.params.cross.push_back({mat(l.w), vec(l.b)});
  for (const auto& l : src.params.bfi) {
    BlockwiseLayerParams<U> out{l.k, {}, l.shared, l.perm};
    for (const auto& b : l.blocks) out.blocks.push_back({mat(b.w), vec(b.b)});
    dst.params.bfi.push_back(std::move(out));
  }
  for (const auto& l : src.params.dense) dst.params.dense.push_back({mat(l.w), vec(l.b)});
  dst.params.head = {mat(src.params.head.w), vec(src.params.head.b)};
  return dst;
}

namespace detail {

inline constexpr std::uint64_t kWeightStream = 0;
inline constexpr std::uint64_t kPermutationStream = 1;

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), drawn in double so float and
/// double models built from one seed agree up to rounding.
template <class T>
Matrix<T> init_weight(std::size_t rows, std::size_t cols, SeededRng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  Matrix<T> w(rows, cols);
  for (auto& v : w.span()) v = static_cast<T>(rng.uniform(-bound, bound));
  return w;
}

}  // namespace detail

/// Initializes weights from the model seed and samples the frozen shuffles.
/// Weights and permutations use separate streams, so a blockwise model with
/// K = 1 draws exactly the baseline's weights.
template <class T>
Model<T> build_model(const ModelConfig& cfg) {
  cfg.validate();
  Model<T> model{cfg, std::nullopt, {}};
  SeededRng wrng(derive_seed(cfg.seed, detail::kWeightStream));
  SeededRng prng(derive_seed(cfg.seed, detail::kPermutationStream));
  const ShuffleMode mode = cfg.shuffle_mode();
  if (mode == ShuffleMode::Once) model.input_perm = sample_permutation(cfg.d, prng);

  const std::size_t width = cfg.padded_dim();
  for (std::size_t c = 0; c < cfg.c; ++c) {
    if (!cfg.variant.blockwise()) {
      model.params.cross.push_back(
          {detail::init_weight<T>(width, width, wrng), Vector<T>(width)});
      continue;
    }
    const std::size_t kk = cfg.effective_k();
    const std::size_t bd = cfg.block_dim();
    BlockwiseLayerParams<T> layer;
    layer.k = kk;
    layer.shared = cfg.variant.share();
    const std::size_t nblocks = layer.shared ? 1 : kk;
    for (std::size_t j = 0; j < nblocks; ++j)
      layer.blocks.push_back({detail::init_weight<T>(bd, bd, wrng), Vector<T>(bd)});
    if (mode == ShuffleMode::PerLayer) layer.perm = sample_permutation(width, prng);
    model.params.bfi.push_back(std::move(layer));
  }

  std::size_t in = cfg.d;
  for (std::size_t i = 0; i < cfg.l; ++i) {
    model.params.dense.push_back(
        {detail::init_weight<T>(cfg.hidden, in, wrng), Vector<T>(cfg.hidden)});
    in = cfg.hidden;
  }
  model.params.head = {detail::init_weight<T>(cfg.m, in, wrng), Vector<T>(cfg.m)};
  return model;
}

template <class T>
struct ModelTape {
  Vector<T> x0;  // shuffled (Q/S) and padded input
  std::vector<CrossTape<T>> cross;
  std::vector<BlockwiseTape<T>> bfi;
  std::vector<DenseTape<T>> dense;
  DenseTape<T> head;
};

/// Shuffles (Q/S) and zero-pads a raw feature vector to the stack width.
template <class T>
Vector<T> prepare_input(const Model<T>& m, const Vector<T>& x) {
  const ModelConfig& cfg = m.config;
  if (x.size() != cfg.d)
    detail::fail("model_forward: input ", x.size(), " vs D=", cfg.d);
  Vector<T> x0(cfg.padded_dim());
  if (m.input_perm) {
    const Vector<T> s = apply_permutation(*m.input_perm, x);
    std::copy(s.begin(), s.end(), x0.begin());
  } else {
    std::copy(x.begin(), x.end(), x0.begin());
  }
  return x0;
}

/// Runs only the cross/blockwise stack on an already prepared x0.
template <class T>
Vector<T> cross_stack_forward(const ModelParams<T>& p, const Vector<T>& x0,
                              ModelTape<T>* tape = nullptr) {
  Vector<T> xc = x0;
  for (const auto& layer : p.cross) {
    auto [next, t] = cross_forward(layer, x0, xc);
    if (tape) tape->cross.push_back(std::move(t));
    xc = std::move(next);
  }
  for (const auto& layer : p.bfi) {
    auto [next, t] = bfi_forward(layer, x0, xc);
    if (tape) tape->bfi.push_back(std::move(t));
    xc = std::move(next);
  }
  return xc;
}

template <class T>
std::pair<Vector<T>, ModelTape<T>> model_forward(const Model<T>& m,
                                                 const Vector<T>& x) {
  ModelTape<T> tape;
  tape.x0 = prepare_input(m, x);
  const Vector<T> xc = cross_stack_forward(m.params, tape.x0, &tape);
  // Padded coordinates are identically zero; the dense tower sees D inputs.
  Vector<T> h(std::vector<T>(xc.begin(), xc.begin() + m.config.d));
  for (const auto& layer : m.params.dense) {
    auto [y, t] = dense_forward(layer, h, true);
    tape.dense.push_back(std::move(t));
    h = std::move(y);
  }
  auto [logits, ht] = dense_forward(m.params.head, h, false);
  tape.head = std::move(ht);
  return {std::move(logits), std::move(tape)};
}

/// Accumulates parameter gradients into `acc` and returns the gradient with
/// respect to the raw input features (x0 paths of every layer included).
template <class T>
Vector<T> model_backward_into(const Model<T>& m, const ModelTape<T>& tape,
                              const Vector<T>& grad_logits, Gradients<T>& acc) {
  const ModelConfig& cfg = m.config;
  if (tape.dense.size() != m.params.dense.size() ||
      tape.cross.size() != m.params.cross.size() ||
      tape.bfi.size() != m.params.bfi.size() ||
      tape.x0.size() != cfg.padded_dim())
    detail::fail("model_backward: tape does not match model");
  if (grad_logits.size() != cfg.m)
    detail::fail("model_backward: grad_logits ", grad_logits.size(), " vs M=",
                 cfg.m);

  Vector<T> g = dense_backward_into(m.params.head, tape.head, grad_logits,
                                    false, acc.head.w, acc.head.b);
  for (std::size_t i = m.params.dense.size(); i-- > 0;)
    g = dense_backward_into(m.params.dense[i], tape.dense[i], g, true,
                            acc.dense[i].w, acc.dense[i].b);

  Vector<T> gx(cfg.padded_dim());
  std::copy(g.begin(), g.end(), gx.begin());
  Vector<T> gx0(cfg.padded_dim());
  for (std::size_t i = m.params.cross.size(); i-- > 0;)
    gx = cross_backward_into(m.params.cross[i], tape.cross[i], gx,
                             acc.cross[i].w, acc.cross[i].b, gx0);
  for (std::size_t i = m.params.bfi.size(); i-- > 0;)
    gx = bfi_backward_into(m.params.bfi[i], tape.bfi[i], gx, acc.bfi[i].blocks,
                           gx0);
  // x_prev of the first layer is x0 itself.
  add_into(gx0, gx);

  Vector<T> grad_input(cfg.d);
  if (m.input_perm) {
    for (std::size_t i = 0; i < cfg.d; ++i) grad_input[(*m.input_perm)[i]] = gx0[i];
  } else {
    std::copy(gx0.begin(), gx0.begin() + cfg.d, grad_input.begin());
  }
  return grad_input;
}

template <class T>
Gradients<T> model_backward(const Model<T>& m, const ModelTape<T>& tape,
                            const Vector<T>& grad_logits) {
  Gradients<T> g = zeros_like(m.params);
  model_backward_into(m, tape, grad_logits, g);
  return g;
}

// ---------------------------------------------------------------------------
// Cost accounting

struct CostReport {
  std::uint64_t cross_params_per_layer = 0;
  std::uint64_t cross_weights_per_layer = 0;  // excluding biases
  std::uint64_t cross_params = 0;
  std::uint64_t dense_params = 0;  // dense tower and head
  std::uint64_t total_params = 0;
  std::uint64_t cross_flops_per_layer = 0;  // multiplies in the matvecs
  std::uint64_t cross_flops_per_instance = 0;
  std::uint64_t dense_flops_per_instance = 0;
  std::uint64_t memory_bytes = 0;  // total_params as 32-bit floats
};

/// Parameter counts: D^2 + D per baseline layer, K((D/K)^2 + D/K) per
/// unshared blockwise layer, (D/K)^2 + D/K per shared one.
inline CostReport param_count(const ModelConfig& cfg) {
  cfg.validate();
  CostReport r;
  const std::uint64_t bd = cfg.block_dim();
  const std::uint64_t kk = cfg.effective_k();
  const std::uint64_t stored_blocks = cfg.variant.share() ? 1 : kk;
  r.cross_weights_per_layer = stored_blocks * bd * bd;
  r.cross_params_per_layer = stored_blocks * (bd * bd + bd);
  r.cross_params = r.cross_params_per_layer * cfg.c;
  std::uint64_t in = cfg.d;
  for (std::size_t i = 0; i < cfg.l; ++i) {
    r.dense_params += in * cfg.hidden + cfg.hidden;
    in = cfg.hidden;
  }
  r.dense_params += in * cfg.m + cfg.m;
  r.total_params = r.cross_params + r.dense_params;
  r.memory_bytes = r.total_params * sizeof(float);
  return r;
}

/// Multiplies per instance: D^2 per baseline layer and K (D/K)^2 = D^2/K per
/// blockwise layer; sharing does not change the count.
inline CostReport flop_count(const ModelConfig& cfg) {
  cfg.validate();
  CostReport r;
  const std::uint64_t bd = cfg.block_dim();
  r.cross_flops_per_layer = cfg.effective_k() * bd * bd;
  r.cross_flops_per_instance = r.cross_flops_per_layer * cfg.c;
  std::uint64_t in = cfg.d;
  for (std::size_t i = 0; i < cfg.l; ++i) {
    r.dense_flops_per_instance += in * cfg.hidden;
    in = cfg.hidden;
  }
  r.dense_flops_per_instance += in * cfg.m;
  return r;
}

inline CostReport cost_report(const ModelConfig& cfg) {
  CostReport r = param_count(cfg);
  const CostReport f = flop_count(cfg);
  r.cross_flops_per_layer = f.cross_flops_per_layer;
  r.cross_flops_per_instance = f.cross_flops_per_instance;
  r.dense_flops_per_instance = f.dense_flops_per_instance;
  return r;
}

}  // namespace bfi
