#pragma once

// Optimizers, the minibatch training loop, evaluation and metrics logs.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bfi/checkpoint.hpp"
#include "bfi/data.hpp"
#include "bfi/layers.hpp"
#include "bfi/model.hpp"

namespace bfi {

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { SGD, Adam };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double momentum = 0.0;  // SGD only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 256;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;

  void validate() const {
    // lr = 0 is allowed so a run can be frozen for diagnostics.
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      detail::fail("TrainConfig: learning rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      detail::fail("TrainConfig: momentum must be in [0, 1)");
    if (!(beta1 > 0.0 && beta1 < 1.0)) detail::fail("TrainConfig: beta1 must be in (0, 1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) detail::fail("TrainConfig: beta2 must be in (0, 1)");
    if (!(epsilon > 0.0)) detail::fail("TrainConfig: epsilon must be > 0");
    if (batch_size < 1) detail::fail("TrainConfig: batch size must be >= 1");
    if (epochs < 1) detail::fail("TrainConfig: epochs must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Optimizer steps on flat buffers

/// v = momentum * v + g; p -= lr * v.
template <class T>
void sgd_step(std::span<T> params, std::span<const T> grads, std::span<T> velocity,
              const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != velocity.size())
    detail::fail("sgd_step: sizes ", params.size(), "/", grads.size(), "/",
                 velocity.size());
  const T lr = static_cast<T>(cfg.learning_rate);
  const T mu = static_cast<T>(cfg.momentum);
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = mu * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

/// Bias-corrected Adam; `t` is the 1-based step number.
template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, std::span<T> m1,
               std::span<T> m2, const TrainConfig& cfg, std::uint64_t t) {
  if (params.size() != grads.size() || params.size() != m1.size() ||
      params.size() != m2.size())
    detail::fail("adam_step: sizes ", params.size(), "/", grads.size(), "/",
                 m1.size(), "/", m2.size());
  if (t < 1) detail::fail("adam_step: step count starts at 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step = static_cast<T>(cfg.learning_rate / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(cfg.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    m1[i] = b1 * m1[i] + (T(1) - b1) * g;
    m2[i] = b2 * m2[i] + (T(1) - b2) * g * g;
    params[i] -= step * m1[i] / (std::sqrt(m2[i] * inv_c2) + eps);
  }
}

namespace detail {

template <class T>
std::vector<std::span<T>> buffers_of(ModelParams<T>& p) {
  std::vector<std::span<T>> out;
  for_each_buffer(p, [&](const std::string&, std::span<T> b) { out.push_back(b); });
  return out;
}

}  // namespace detail

/// Holds per-buffer optimizer state shaped like the model parameters.
template <class T>
class Optimizer {
 public:
  Optimizer(const ModelParams<T>& like, const TrainConfig& cfg)
      : cfg_(cfg), first_(zeros_like(like)), second_(zeros_like(like)) {
    cfg_.validate();
  }

  void step(ModelParams<T>& params, ModelParams<T>& grads) {
    auto p = detail::buffers_of(params);
    auto g = detail::buffers_of(grads);
    auto s1 = detail::buffers_of(first_);
    auto s2 = detail::buffers_of(second_);
    if (p.size() != g.size() || p.size() != s1.size())
      detail::fail("Optimizer::step: parameter structure changed");
    ++t_;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (cfg_.optimizer == OptimizerKind::SGD)
        sgd_step<T>(p[i], g[i], s1[i], cfg_);
      else
        adam_step<T>(p[i], g[i], s1[i], s2[i], cfg_, t_);
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  TrainConfig cfg_;
  ModelParams<T> first_;
  ModelParams<T> second_;
  std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

namespace detail {

inline void check_compatible(const ModelConfig& cfg, const Dataset& ds) {
  if (ds.dim() != cfg.d)
    fail("dataset has ", ds.dim(), " features, model expects D=", cfg.d);
  if (ds.num_classes > cfg.m)
    fail("dataset has ", ds.num_classes, " classes, model has M=", cfg.m);
}

}  // namespace detail

/// Mean cross-entropy and argmax accuracy (ties to the lowest class).
template <class T>
EvalResult evaluate(const Model<T>& model, const Dataset& ds) {
  detail::check_compatible(model.config, ds);
  double loss = 0.0;
  std::size_t correct = 0;
  Vector<T> x(ds.dim());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto r = ds.features.row(i);
    std::copy(r.begin(), r.end(), x.begin());
    const auto [logits, tape] = model_forward(model, x);
    loss += static_cast<double>(softmax_xent(logits, ds.labels[i]).loss);
    if (argmax(logits) == ds.labels[i]) ++correct;
  }
  const auto n = static_cast<double>(ds.size());
  return {loss / n, static_cast<double>(correct) / n};
}

/// Running loss and accuracy over one epoch, measured on each instance
/// before the update of its batch.
template <class T>
EvalResult train_epoch(Model<T>& model, Optimizer<T>& opt, const Dataset& ds,
                       const TrainConfig& cfg, std::uint64_t epoch) {
  detail::check_compatible(model.config, ds);
  Gradients<T> grads = zeros_like(model.params);
  auto grad_bufs = detail::buffers_of(grads);
  double loss = 0.0;
  std::size_t correct = 0;
  Vector<T> x(ds.dim());
  for (const auto& batch : batches(ds, cfg.batch_size, cfg.seed, epoch)) {
    for (auto& b : grad_bufs) std::fill(b.begin(), b.end(), T(0));
    for (std::size_t idx : batch) {
      auto r = ds.features.row(idx);
      std::copy(r.begin(), r.end(), x.begin());
      const auto [logits, tape] = model_forward(model, x);
      const auto lg = softmax_xent(logits, ds.labels[idx]);
      if (!std::isfinite(lg.loss))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) +
                              ", row " + std::to_string(idx));
      loss += static_cast<double>(lg.loss);
      if (argmax(logits) == ds.labels[idx]) ++correct;
      model_backward_into(model, tape, lg.grad, grads);
    }
    const T scale = T(1) / static_cast<T>(batch.size());
    for (auto& b : grad_bufs)
      for (auto& v : b) v *= scale;
    opt.step(model.params, grads);
  }
  const auto n = static_cast<double>(ds.size());
  return {loss / n, static_cast<double>(correct) / n};
}

// ---------------------------------------------------------------------------

struct MetricsRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double wall_seconds = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;

  /// With `timing` off the wall_seconds column is written as 0 so that the
  /// file depends only on the configuration.
  void write_csv(std::ostream& os, bool timing = true) const {
    os << "epoch,train_loss,train_acc,test_acc,wall_seconds\n";
    char buf[160];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.3f\n", r.epoch,
                    r.train_loss, r.train_acc, r.test_acc,
                    timing ? r.wall_seconds : 0.0);
      os << buf;
    }
  }

  void write_csv(const std::string& path, bool timing = true) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    write_csv(os, timing);
  }
};

/// `{variant}_K{K}_C{C}_L{L}`, the per-grid-point file stem.
inline std::string run_name(const ModelConfig& cfg) {
  return std::string(cfg.variant.name()) + "_K" + std::to_string(cfg.k) + "_C" +
         std::to_string(cfg.c) + "_L" + std::to_string(cfg.l);
}

struct DataConfig {
  std::string path;
  LoadOptions load{};
  double train_fraction = 0.5;
  std::uint64_t split_seed = 0;
  std::size_t limit = 0;  // rows sampled before the split; 0 keeps all
};

struct PreparedData {
  Dataset train;
  Dataset test;
  StandardizeStats stats;
};

/// load -> optional subsample -> split -> standardize with train statistics.
/// Files starting with the BFID magic are read as binary caches.
inline PreparedData prepare_data(const DataConfig& dc) {
  Dataset all;
  {
    std::ifstream probe(dc.path, std::ios::binary);
    if (!probe) throw LoadError(dc.path + ": cannot open file");
    std::array<char, 4> magic{};
    probe.read(magic.data(), magic.size());
    all = (probe && magic == kDatasetMagic) ? load_dataset_binary(dc.path)
                                            : load_delimited(dc.path, dc.load);
  }
  if (dc.limit > 0) all = subsample(all, dc.limit, dc.split_seed);
  auto [train, test] = split(all, dc.train_fraction, dc.split_seed);
  auto [stats, train_std] = standardize(train);
  Dataset test_std = apply_standardize(stats, test);
  return {std::move(train_std), std::move(test_std), std::move(stats)};
}

struct ExperimentResult {
  MetricsLog log;
  Model<float> model;
};

/// Trains a freshly built model and evaluates on the test split after every
/// epoch. When `out_dir` is given, writes `{run_name}.csv` and
/// `{run_name}.bfic` there.
inline ExperimentResult run_experiment(const ModelConfig& mcfg,
                                       const TrainConfig& tcfg,
                                       const PreparedData& data,
                                       const std::optional<std::string>& out_dir = {},
                                       bool timing = true) {
  mcfg.validate();
  tcfg.validate();
  detail::check_compatible(mcfg, data.train);
  detail::check_compatible(mcfg, data.test);
  ExperimentResult res{{}, build_model<float>(mcfg)};
  Optimizer<float> opt(res.model.params, tcfg);
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t e = 0; e < tcfg.epochs; ++e) {
    const EvalResult tr = train_epoch(res.model, opt, data.train, tcfg, e);
    const EvalResult te = evaluate(res.model, data.test);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    res.log.rows.push_back({e + 1, tr.loss, tr.accuracy, te.accuracy, secs});
  }
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    const auto stem = (std::filesystem::path(*out_dir) / run_name(mcfg)).string();
    res.log.write_csv(stem + ".csv", timing);
    save_checkpoint(res.model, stem + ".bfic");
  }
  return res;
}

inline ExperimentResult run_experiment(const ModelConfig& mcfg,
                                       const TrainConfig& tcfg,
                                       const DataConfig& dcfg,
                                       const std::optional<std::string>& out_dir = {},
                                       bool timing = true) {
  return run_experiment(mcfg, tcfg, prepare_data(dcfg), out_dir, timing);
}

}  // namespace bfi
