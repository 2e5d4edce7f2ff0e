#pragma once

// Central finite differences as an independent oracle for model_backward.
// Runs in double precision only.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "bfi/layers.hpp"
#include "bfi/model.hpp"

namespace bfi {

struct FiniteDiffResult {
  std::vector<double> grad;
  std::vector<bool> skipped;  // a probe produced a non-finite loss
};

/// (f(theta + eps e_i) - f(theta - eps e_i)) / (2 eps) for every coordinate.
inline FiniteDiffResult finite_diff(
    const std::function<double(const std::vector<double>&)>& loss_fn,
    std::vector<double> theta, double eps) {
  if (!(eps > 0.0)) detail::fail("finite_diff: eps must be > 0");
  FiniteDiffResult out{std::vector<double>(theta.size(), 0.0),
                       std::vector<bool>(theta.size(), false)};
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = theta[i];
    theta[i] = orig + eps;
    const double up = loss_fn(theta);
    theta[i] = orig - eps;
    const double down = loss_fn(theta);
    theta[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      out.skipped[i] = true;
      continue;
    }
    out.grad[i] = (up - down) / (2.0 * eps);
  }
  return out;
}

struct BufferCheck {
  std::string name;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t skipped = 0;
  bool pass = true;
};

struct GradCheckReport {
  ModelConfig config;
  std::vector<BufferCheck> buffers;

  bool pass() const {
    for (const auto& b : buffers)
      if (!b.pass) return false;
    return true;
  }

  void print(std::ostream& os) const {
    char line[200];
    std::snprintf(line, sizeof line, "%-22s %14s %14s %8s  %s\n", "buffer",
                  "max_rel_err", "max_abs_err", "worst", "status");
    os << line;
    for (const auto& b : buffers) {
      std::snprintf(line, sizeof line, "%-22s %14.3e %14.3e %8zu  %s\n",
                    b.name.c_str(), b.max_relative_error, b.max_absolute_error,
                    b.worst_index, b.pass ? "ok" : "FAIL");
      os << line;
    }
  }

  void write_csv(std::ostream& os) const {
    os << "buffer,max_rel_err,max_abs_err,worst_index,pass\n";
    char line[200];
    for (const auto& b : buffers) {
      std::snprintf(line, sizeof line, "%s,%.6e,%.6e,%zu,%d\n", b.name.c_str(),
                    b.max_relative_error, b.max_absolute_error, b.worst_index,
                    b.pass ? 1 : 0);
      os << line;
    }
  }
};

struct GradCheckOptions {
  std::size_t probes = 1;  // random (input, label) points per check
  double eps = 1e-5;
  double rel_tol = 1e-5;
  double abs_floor = 1e-8;
  /// Applied to the analytic gradients before comparison (mutation testing).
  std::function<void(Gradients<double>&)> corrupt;
};

/// A small configuration for oracle runs; D=7 with K=2 exercises padding.
inline ModelConfig tiny_config(VariantKind kind, std::uint64_t seed) {
  ModelConfig c;
  c.d = 7;
  c.c = 2;
  c.k = 2;
  c.l = 2;
  c.hidden = 6;
  c.m = 3;
  c.variant = {kind};
  c.seed = seed;
  return c;
}

namespace detail {

inline std::vector<double> flatten(const ModelParams<double>& p) {
  std::vector<double> out;
  for_each_buffer(p, [&](const std::string&, std::span<const double> b) {
    out.insert(out.end(), b.begin(), b.end());
  });
  return out;
}

inline void unflatten(const std::vector<double>& flat, ModelParams<double>& p) {
  std::size_t at = 0;
  for_each_buffer(p, [&](const std::string&, std::span<double> b) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at),
              flat.begin() + static_cast<std::ptrdiff_t>(at + b.size()), b.begin());
    at += b.size();
  });
}

/// True when every ReLU pre-activation sits at least `margin` away from 0.
inline bool clear_of_kinks(const ModelTape<double>& tape, double margin) {
  for (const auto& t : tape.dense)
    for (double v : t.pre)
      if (std::abs(v) < margin) return false;
  return true;
}

inline std::vector<bool> relu_mask(const ModelTape<double>& tape) {
  std::vector<bool> mask;
  for (const auto& t : tape.dense)
    for (double v : t.pre) mask.push_back(v > 0.0);
  return mask;
}

}  // namespace detail

/// Compares model_backward against finite differences over every parameter
/// buffer. Probe points whose ReLU pre-activations lie within 10*eps of zero
/// are resampled, as are points where a probe step would flip a ReLU.
inline GradCheckReport check_model(const ModelConfig& cfg,
                                   const GradCheckOptions& opt = {}) {
  Model<double> model = build_model<double>(cfg);
  const std::vector<double> theta = detail::flatten(model.params);

  GradCheckReport report{cfg, {}};
  for_each_buffer(model.params, [&](const std::string& name, std::span<const double>) {
    report.buffers.push_back({name});
  });

  SeededRng rng(derive_seed(cfg.seed, 0x67726164ULL));
  std::size_t done = 0;
  std::size_t attempts = 0;
  while (done < opt.probes) {
    if (++attempts > 1000 * opt.probes)
      detail::fail("check_model: could not find a probe point clear of ReLU kinks");
    Vector<double> x(cfg.d);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    const auto label = static_cast<std::size_t>(rng.below(cfg.m));

    const auto [logits, tape] = model_forward(model, x);
    if (!detail::clear_of_kinks(tape, 10.0 * opt.eps)) continue;
    const auto base_mask = detail::relu_mask(tape);

    bool crossed = false;
    Model<double> scratch = model;
    auto loss_fn = [&](const std::vector<double>& th) {
      detail::unflatten(th, scratch.params);
      const auto [lg, t] = model_forward(scratch, x);
      if (detail::relu_mask(t) != base_mask) crossed = true;
      return softmax_xent(lg, label).loss;
    };
    const FiniteDiffResult numeric = finite_diff(loss_fn, theta, opt.eps);
    if (crossed) continue;

    Gradients<double> analytic =
        model_backward(model, tape, softmax_xent(logits, label).grad);
    if (opt.corrupt) opt.corrupt(analytic);
    const std::vector<double> flat = detail::flatten(analytic);

    std::size_t at = 0;
    for (auto& buf : report.buffers) {
      std::size_t n = 0;
      for_each_buffer(analytic, [&](const std::string& name, std::span<const double> b) {
        if (name == buf.name) n = b.size();
      });
      for (std::size_t i = 0; i < n; ++i, ++at) {
        if (numeric.skipped[at]) {
          ++buf.skipped;
          continue;
        }
        const double a = flat[at];
        const double f = numeric.grad[at];
        const double abs_err = std::abs(a - f);
        const double scale = std::max(std::abs(a), std::abs(f));
        const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;
        const bool ok = rel_err <= opt.rel_tol || abs_err <= opt.abs_floor;
        if (!ok) buf.pass = false;
        if (rel_err > buf.max_relative_error && abs_err > opt.abs_floor) {
          buf.max_relative_error = rel_err;
          buf.worst_index = i;
        }
        buf.max_absolute_error = std::max(buf.max_absolute_error, abs_err);
      }
    }
    ++done;
  }
  return report;
}

}  // namespace bfi
