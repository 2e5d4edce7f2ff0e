// Command-line entry points: train, sweep, cost, gradcheck.
//
// Exit codes: 0 ok, 1 config error, 2 data error, 3 divergence,
// 4 gradcheck failure. Failures print one line to stderr:
//   error code=<n> kind=<kind> reason="<text>"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "bfi/config.hpp"
#include "bfi/gradcheck.hpp"
#include "bfi/model.hpp"
#include "bfi/train.hpp"

namespace {

using namespace bfi;

enum Exit : int { kOk = 0, kConfig = 1, kData = 2, kDivergence = 3, kGradcheck = 4 };

int report(Exit code, const char* kind, std::string reason) {
  std::replace(reason.begin(), reason.end(), '"', '\'');
  std::replace(reason.begin(), reason.end(), '\n', ' ');
  std::cerr << "error code=" << code << " kind=" << kind << " reason=\"" << reason
            << "\"\n";
  return code;
}

ExperimentConfig load_with_overrides(const std::string& path,
                                     const std::vector<std::string>& sets) {
  ExperimentConfig cfg = load_config(path);
  for (const auto& s : sets) apply_override(cfg, s);
  return cfg;
}

int cmd_train(const std::string& path, const std::vector<std::string>& sets) {
  ExperimentConfig cfg;
  try {
    cfg = load_with_overrides(path, sets);
    validate_for_training(cfg);
  } catch (const std::exception& e) {
    return report(kConfig, "config", e.what());
  }
  PreparedData data;
  try {
    data = prepare_data(cfg.data);
    if (data.train.dim() != cfg.model.d)
      throw LoadError("data has " + std::to_string(data.train.dim()) +
                      " features, model.D=" + std::to_string(cfg.model.d));
    if (data.train.num_classes > cfg.model.m || data.test.num_classes > cfg.model.m)
      throw LoadError("data has more classes than model.M=" + std::to_string(cfg.model.m));
  } catch (const std::exception& e) {
    return report(kData, "data", e.what());
  }
  try {
    const auto res = run_experiment(cfg.model, cfg.train, data, cfg.output_dir, cfg.timing);
    const auto& last = res.log.rows.back();
    std::printf("%s epochs=%zu train_loss=%.6f train_acc=%.6f test_acc=%.6f\n",
                run_name(cfg.model).c_str(), last.epoch, last.train_loss,
                last.train_acc, last.test_acc);
  } catch (const DivergenceError& e) {
    return report(kDivergence, "divergence", e.what());
  } catch (const std::exception& e) {
    return report(kData, "data", e.what());
  }
  return kOk;
}

struct PointResult {
  ModelConfig cfg;
  bool ok = false;
  std::string status;
  MetricsRow last;
};

int cmd_sweep(const std::string& path, const std::vector<std::string>& sets,
              std::size_t jobs) {
  ExperimentConfig cfg;
  std::vector<ModelConfig> grid;
  try {
    cfg = load_with_overrides(path, sets);
    validate_for_training(cfg);
    grid = expand_grid(cfg);
  } catch (const std::exception& e) {
    return report(kConfig, "config", e.what());
  }
  PreparedData data;
  try {
    data = prepare_data(cfg.data);
    if (data.train.dim() != cfg.model.d)
      throw LoadError("data has " + std::to_string(data.train.dim()) +
                      " features, model.D=" + std::to_string(cfg.model.d));
  } catch (const std::exception& e) {
    return report(kData, "data", e.what());
  }

  std::vector<PointResult> results(grid.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < grid.size();) {
      auto& r = results[i];
      r.cfg = grid[i];
      try {
        const auto res = run_experiment(grid[i], cfg.train, data, cfg.output_dir, cfg.timing);
        r.last = res.log.rows.back();
        r.ok = true;
        r.status = "ok";
      } catch (const DivergenceError&) {
        r.status = "divergence";
      } catch (const std::exception&) {
        r.status = "error";
      }
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(grid.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::filesystem::create_directories(cfg.output_dir);
  const auto summary = (std::filesystem::path(cfg.output_dir) / "summary.csv").string();
  std::ofstream os(summary);
  os << "variant,K,C,L,final_train_loss,final_train_acc,final_test_acc,status\n";
  int code = kOk;
  for (const auto& r : results) {
    char line[256];
    std::snprintf(line, sizeof line, "%s,%zu,%zu,%zu,%.6f,%.6f,%.6f,%s\n",
                  std::string(r.cfg.variant.name()).c_str(), r.cfg.k, r.cfg.c,
                  r.cfg.l, r.last.train_loss, r.last.train_acc, r.last.test_acc,
                  r.status.c_str());
    os << line;
    std::cout << line;
    if (!r.ok && code == kOk) code = r.status == "divergence" ? kDivergence : kData;
  }
  if (code != kOk) return report(static_cast<Exit>(code), "sweep", "one or more grid points failed; see " + summary);
  return kOk;
}

void print_cost_header() {
  std::printf("%-8s %4s %4s %6s %16s %16s %14s %16s %18s %14s %14s %14s\n",
              "variant", "K", "C", "width", "cross_par/layer", "cross_wts/layer",
              "cross_params", "cross_mul/layer", "cross_mul/inst", "dense_params",
              "total_params", "memory_bytes");
}

void print_cost_row(const ModelConfig& m) {
  const CostReport r = cost_report(m);
  std::printf("%-8s %4zu %4zu %6zu %16llu %16llu %14llu %16llu %18llu %14llu %14llu %14llu\n",
              std::string(m.variant.name()).c_str(), m.k, m.c, m.padded_dim(),
              static_cast<unsigned long long>(r.cross_params_per_layer),
              static_cast<unsigned long long>(r.cross_weights_per_layer),
              static_cast<unsigned long long>(r.cross_params),
              static_cast<unsigned long long>(r.cross_flops_per_layer),
              static_cast<unsigned long long>(r.cross_flops_per_instance),
              static_cast<unsigned long long>(r.dense_params),
              static_cast<unsigned long long>(r.total_params),
              static_cast<unsigned long long>(r.memory_bytes));
}

int cmd_cost(const std::string& path, const std::vector<std::string>& sets, bool all) {
  ExperimentConfig cfg;
  try {
    cfg = load_with_overrides(path, sets);
    validate_model(cfg);
  } catch (const std::exception& e) {
    return report(kConfig, "config", e.what());
  }
  print_cost_header();
  if (!all) {
    print_cost_row(cfg.model);
    return kOk;
  }
  for (auto kind : VariantSpec::all) {
    ModelConfig m = cfg.model;
    m.variant.kind = kind;
    print_cost_row(m);
  }
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t seeds, const std::string& variant,
                  const std::string& corrupt, const std::string& csv) {
  std::vector<VariantKind> kinds;
  if (variant == "all") {
    kinds.assign(std::begin(VariantSpec::all), std::end(VariantSpec::all));
  } else if (auto v = VariantSpec::parse(variant)) {
    kinds.push_back(v->kind);
  } else {
    return report(kConfig, "config", "unknown variant '" + variant + "'");
  }
  GradCheckOptions opt;
  if (!corrupt.empty()) {
    opt.corrupt = [corrupt](Gradients<double>& g) {
      for_each_buffer(g, [&](const std::string& name, std::span<double> b) {
        if (name == corrupt)
          for (auto& v : b) v = -v;
      });
    };
  }
  std::ofstream csv_out;
  if (!csv.empty()) {
    csv_out.open(csv);
    if (!csv_out) return report(kConfig, "config", "cannot write " + csv);
  }
  bool all_pass = true;
  for (auto kind : kinds) {
    for (std::size_t s = 0; s < seeds; ++s) {
      const ModelConfig cfg = tiny_config(kind, seed + s);
      GradCheckReport rep;
      try {
        rep = check_model(cfg, opt);
      } catch (const std::exception& e) {
        return report(kGradcheck, "gradcheck", e.what());
      }
      std::cout << "== " << cfg.variant.name() << " seed=" << cfg.seed << " D=" << cfg.d
                << " C=" << cfg.c << " K=" << cfg.k << " L=" << cfg.l
                << (rep.pass() ? "  PASS" : "  FAIL") << "\n";
      rep.print(std::cout);
      if (csv_out) rep.write_csv(csv_out);
      all_pass = all_pass && rep.pass();
    }
  }
  if (!all_pass) return report(kGradcheck, "gradcheck", "analytic gradients disagree with finite differences");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross networks and blockwise feature interaction: training, sweeps, cost and gradient checks"};
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> sets;

  auto* train = app.add_subcommand("train", "Train one configuration");
  train->add_option("config", config, "Experiment config file")->required();
  train->add_option("--set", sets, "Override a key: section.key=value");

  std::size_t jobs = 1;
  std::string g_variants, g_k, g_c, g_l;
  auto* sweep = app.add_subcommand("sweep", "Train every point of a variant x K x C x L grid");
  sweep->add_option("config", config, "Experiment config file")->required();
  sweep->add_option("--set", sets, "Override a key: section.key=value");
  sweep->add_option("--variants", g_variants, "Comma list, e.g. Baseline,P,T");
  sweep->add_option("--K", g_k, "Comma list or range, e.g. 3,6,9");
  sweep->add_option("--C", g_c, "Comma list or range, e.g. 1..3");
  sweep->add_option("--L", g_l, "Comma list or range");
  sweep->add_option("--jobs", jobs, "Grid points trained in parallel")->check(CLI::PositiveNumber);

  bool all = false;
  auto* cost = app.add_subcommand("cost", "Print parameter and multiply counts");
  cost->add_option("config", config, "Experiment config file")->required();
  cost->add_option("--set", sets, "Override a key: section.key=value");
  cost->add_flag("--all", all, "Show all five variants side by side");

  std::uint64_t seed = 1;
  std::size_t seeds = 1;
  std::string variant = "all", corrupt, csv;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradients");
  grad->add_option("--seed", seed, "First model seed");
  grad->add_option("--seeds", seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber);
  grad->add_option("--variant", variant, "Baseline, P, Q, T, S or all");
  grad->add_option("--corrupt", corrupt, "Negate this gradient buffer (mutation test)");
  grad->add_option("--csv", csv, "Also write the report as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return kConfig;
  }

  if (*train) return cmd_train(config, sets);
  if (*sweep) {
    if (!g_variants.empty()) sets.push_back("sweep.variants=" + g_variants);
    if (!g_k.empty()) sets.push_back("sweep.K=" + g_k);
    if (!g_c.empty()) sets.push_back("sweep.C=" + g_c);
    if (!g_l.empty()) sets.push_back("sweep.L=" + g_l);
    return cmd_sweep(config, sets, jobs);
  }
  if (*cost) return cmd_cost(config, sets, all);
  if (*grad) return cmd_gradcheck(seed, seeds, variant, corrupt, csv);
  return kConfig;
}
