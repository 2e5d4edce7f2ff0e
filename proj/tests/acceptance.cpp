// Acceptance report: one PASS/FAIL line per criterion, exit status 1 if any
// hard criterion fails.
//
// Covertype-based criteria read the UCI covtype.data file (comma separated,
// label 1..7 last) from $BFI_COVTYPE, falling back to data/covtype.data in the
// source tree.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "bfi/gradcheck.hpp"
#include "bfi/model.hpp"
#include "bfi/train.hpp"
#include "test_util.hpp"

namespace {

using namespace bfi;

// Pinned tolerances.
constexpr double kGradEps = 1e-5;
constexpr double kGradRelTol = 1e-5;
constexpr double kGradAbsFloor = 1e-8;
constexpr std::uint64_t kGradSeeds = 10;
constexpr double kMinSpeedup = 2.0;
constexpr double kOverfitAccuracy = 0.99;
constexpr std::size_t kOverfitRows = 512;
constexpr std::size_t kOverfitMaxEpochs = 200;
constexpr std::size_t kTrendRowsPerSide = 50000;
constexpr double kTrendGapPoints = 2.0;
constexpr double kTrendFloor = 0.70;
constexpr double kSharingSlackPoints = 0.5;
constexpr std::uint64_t kTrendSeeds = 3;

int hard_failures = 0;

void line(int id, bool pass, const std::string& title, const std::string& detail,
          bool soft = false) {
  std::printf("%s  criterion %d  %-34s %s%s\n", pass ? "PASS" : "FAIL", id, title.c_str(),
              detail.c_str(), (!pass && soft) ? "  [soft: warning only]" : "");
  std::fflush(stdout);
  if (!pass && !soft) ++hard_failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ModelConfig model(VariantKind kind, std::size_t d, std::size_t c, std::size_t k,
                  std::size_t l, std::size_t m, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.d = d;
  cfg.c = c;
  cfg.k = k;
  cfg.l = l;
  cfg.m = m;
  cfg.variant = {kind};
  cfg.seed = seed;
  return cfg;
}

template <class T>
std::vector<T> flat(const ModelParams<T>& p) {
  std::vector<T> out;
  for_each_buffer(p, [&](const std::string&, std::span<const T> b) {
    out.insert(out.end(), b.begin(), b.end());
  });
  return out;
}

template <class T>
bool bitwise_equal(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

// ---------------------------------------------------------------------------

void degeneracy() {
  const auto dir = testing::temp_dir("accept_degeneracy");
  testing::write_synthetic_csv(dir + "/data.csv", 400, 12, 4, 3);
  DataConfig dc;
  dc.path = dir + "/data.csv";
  dc.load.label_base = 1;
  const auto data = prepare_data(dc);

  bool forward = true, backward = true;
  for (bool explicit_identity : {false, true}) {
    const auto base = build_model<float>(model(VariantKind::Baseline, 12, 3, 1, 2, 4, 7));
    auto p = build_model<float>(model(VariantKind::P, 12, 3, 1, 2, 4, 7));
    if (explicit_identity)
      for (auto& l : p.params.bfi) l.perm = Permutation::identity(12);
    for (std::size_t i = 0; i < data.test.size(); ++i) {
      const auto [lb, tb] = model_forward(base, data.test.row(i));
      const auto [lp, tp] = model_forward(p, data.test.row(i));
      forward = forward && bitwise_equal(lb.raw(), lp.raw());
      const auto g = softmax_xent(lb, data.test.labels[i]).grad;
      Gradients<float> gb = zeros_like(base.params), gp = zeros_like(p.params);
      const auto xb = model_backward_into(base, tb, g, gb);
      const auto xp = model_backward_into(p, tp, g, gp);
      backward = backward && bitwise_equal(flat(gb), flat(gp)) && bitwise_equal(xb.raw(), xp.raw());
    }
  }

  TrainConfig tc;
  tc.epochs = 5;
  tc.batch_size = 32;
  tc.seed = 4;
  const auto rb = run_experiment(model(VariantKind::Baseline, 12, 3, 1, 2, 4, 7), tc, data);
  const auto rp = run_experiment(model(VariantKind::P, 12, 3, 1, 2, 4, 7), tc, data);
  std::ostringstream mb, mp;
  rb.log.write_csv(mb, false);
  rp.log.write_csv(mp, false);
  bool metrics = mb.str() == mp.str();
  for (std::size_t e = 0; e < rb.log.rows.size(); ++e) {
    const auto& a = rb.log.rows[e];
    const auto& b = rp.log.rows[e];
    metrics = metrics && a.train_loss == b.train_loss && a.train_acc == b.train_acc &&
              a.test_acc == b.test_acc;
  }
  const bool params = bitwise_equal(flat(rb.model.params), flat(rp.model.params));
  line(1, forward && backward && metrics && params, "degeneracy P(K=1) == Baseline",
       fmt("forward=%s gradients=%s metrics=%s trained_params=%s (bitwise)",
           forward ? "equal" : "DIFFER", backward ? "equal" : "DIFFER",
           metrics ? "equal" : "DIFFER", params ? "equal" : "DIFFER"));
}

void gradient_oracle() {
  GradCheckOptions opt;
  opt.eps = kGradEps;
  opt.rel_tol = kGradRelTol;
  opt.abs_floor = kGradAbsFloor;
  std::size_t failed = 0, runs = 0;
  double worst = 0.0, worst_abs = 0.0;
  std::string worst_where = "none";
  for (auto kind : VariantSpec::all)
    for (std::uint64_t seed = 0; seed < kGradSeeds; ++seed) {
      const auto rep = check_model(tiny_config(kind, seed), opt);
      ++runs;
      if (!rep.pass()) ++failed;
      for (const auto& b : rep.buffers) {
        worst_abs = std::max(worst_abs, b.max_absolute_error);
        if (b.max_relative_error > worst) {
          worst = b.max_relative_error;
          worst_where = std::string(VariantSpec{kind}.name()) + " seed " + std::to_string(seed) +
                        " " + b.name;
        }
      }
    }
  line(2, failed == 0, "finite-difference gradient check",
       fmt("%zu/%zu variant-seed checks pass; max abs err %.1e; max rel err where abs err > "
           "floor %.1e (%s); tol %.0e, floor %.0e",
           runs - failed, runs, worst_abs, worst, worst_where.c_str(), kGradRelTol, kGradAbsFloor));
}

void cost_closed_forms() {
  struct Point {
    std::size_t d, k;
  };
  const Point points[] = {{54, 3}, {54, 6}, {54, 9}, {1024, 4}, {1024, 8}};
  std::size_t checked = 0, mismatched = 0;
  for (const auto& pt : points)
    for (std::size_t c = 1; c <= 3; ++c)
      for (auto kind : VariantSpec::all) {
        const auto cfg = model(kind, pt.d, c, pt.k, 1, 2, 1);
        const auto m = build_model<float>(cfg);
        std::uint64_t enumerated = 0;
        for_each_buffer(m.params, [&](const std::string& name, std::span<const float> b) {
          if (name.starts_with("cross") || name.starts_with("bfi")) enumerated += b.size();
        });
        const std::uint64_t d = pt.d, k = pt.k, bd = d / k;
        std::uint64_t per_layer = 0;
        switch (kind) {
          case VariantKind::Baseline: per_layer = d * d + d; break;
          case VariantKind::P:
          case VariantKind::Q: per_layer = k * (bd * bd + bd); break;
          case VariantKind::T:
          case VariantKind::S: per_layer = bd * bd + bd; break;
        }
        const auto report = param_count(cfg);
        ++checked;
        if (enumerated != c * per_layer || report.cross_params != c * per_layer ||
            report.total_params * 4 != report.memory_bytes)
          ++mismatched;
      }
  const auto w = [](VariantKind kind) {
    return param_count(model(kind, 54, 1, 3, 1, 7, 0)).cross_weights_per_layer;
  };
  const bool examples = w(VariantKind::Baseline) == 2916 && w(VariantKind::P) == 972 &&
                        w(VariantKind::T) == 324;
  line(3, mismatched == 0 && examples, "parameter counts = closed forms",
       fmt("%zu/%zu configs exact; D=54 per-layer weights Baseline/P3/T3 = %llu/%llu/%llu",
           checked - mismatched, checked, static_cast<unsigned long long>(w(VariantKind::Baseline)),
           static_cast<unsigned long long>(w(VariantKind::P)),
           static_cast<unsigned long long>(w(VariantKind::T))));
}

double time_cross_stack(const Model<float>& m, const std::vector<Vector<float>>& batch) {
  double best = 1e30;
  for (int rep = 0; rep < 7; ++rep) {
    const auto t0 = std::chrono::steady_clock::now();
    float sink = 0;
    for (const auto& x : batch) sink += cross_stack_forward(m.params, x)[0];
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (sink == 12345.678f) std::puts("");  // keep the work observable
    best = std::min(best, s);
  }
  return best;
}

void flop_reduction() {
  SeededRng rng(11);
  struct Point {
    std::size_t d, k;
  };
  const Point points[] = {{54, 1}, {54, 3}, {54, 6}, {54, 9}, {1024, 4}, {1024, 8}};
  std::size_t checked = 0, mismatched = 0;
  for (const auto& pt : points)
    for (auto kind : VariantSpec::all) {
      const auto m = build_model<float>(model(kind, pt.d, 1, pt.k, 1, 2, 1));
      const auto x0 = prepare_input(m, testing::random_vector<float>(pt.d, rng));
      MultiplyCounter counter;
      cross_stack_forward(m.params, x0);
      const std::uint64_t want =
          kind == VariantKind::Baseline ? pt.d * pt.d : pt.d * pt.d / pt.k;
      ++checked;
      if (counter.count() != want) ++mismatched;
    }

  const std::size_t d = 1024, k = 8, batch_size = 256, c = 3;
  const auto base = build_model<float>(model(VariantKind::Baseline, d, c, k, 1, 2, 5));
  const auto bfi = build_model<float>(model(VariantKind::P, d, c, k, 1, 2, 5));
  std::vector<Vector<float>> xb, xp;
  for (std::size_t i = 0; i < batch_size; ++i) {
    const auto x = testing::random_vector<float>(d, rng);
    xb.push_back(prepare_input(base, x));
    xp.push_back(prepare_input(bfi, x));
  }
  const double tb = time_cross_stack(base, xb);
  const double tp = time_cross_stack(bfi, xp);
  const double speedup = tb / tp;
  line(4, mismatched == 0 && speedup >= kMinSpeedup, "multiply counts and wall-clock",
       fmt("%zu/%zu counts exact (D^2, D^2/K); D=1024 K=8 C=3 batch 256: Baseline %.1f ms, "
           "P %.1f ms, speedup %.2fx (need >= %.1fx)",
           checked - mismatched, checked, tb * 1e3, tp * 1e3, speedup, kMinSpeedup));
}

// ---------------------------------------------------------------------------

std::string covtype_path() {
  if (const char* env = std::getenv("BFI_COVTYPE"); env && *env) return env;
  return std::string(BFI_SOURCE_DIR) + "/data/covtype.data";
}

void learning_sanity(const std::optional<Dataset>& cov) {
  if (!cov) {
    line(5, false, "512-row overfit (Covertype)", "not evaluated: Covertype file not found at " + covtype_path());
    return;
  }
  const Dataset rows = subsample(*cov, kOverfitRows, 0);
  const Dataset train = standardize(rows).second;
  auto m = build_model<float>(model(VariantKind::Baseline, 54, 2, 1, 2, 7, 0));
  TrainConfig tc;
  tc.batch_size = 32;
  Optimizer<float> opt(m.params, tc);
  double acc = 0.0;
  std::size_t epoch = 0;
  while (epoch < kOverfitMaxEpochs && acc < kOverfitAccuracy) {
    train_epoch(m, opt, train, tc, epoch++);
    acc = evaluate(m, train).accuracy;
  }
  line(5, acc >= kOverfitAccuracy, "512-row overfit (Covertype)",
       fmt("Baseline C=2 L=2: train accuracy %.4f after %zu epochs (need >= %.2f within %zu)",
           acc, epoch, kOverfitAccuracy, kOverfitMaxEpochs));
}

void desk_scale(const std::optional<Dataset>& cov) {
  if (!cov) {
    const std::string why = "not evaluated: Covertype file not found at " + covtype_path();
    line(6, false, "50k/50k trend P(K=3) vs Baseline", why);
    line(7, false, "sharing direction T(K=3) <= P(K=3)+0.5", why, true);
    return;
  }
  // 100k rows sampled once, split 50/50, standardized with train statistics.
  const Dataset rows = subsample(*cov, 2 * kTrendRowsPerSide, 0);
  auto [train_raw, test_raw] = split(rows, 0.5, 0);
  auto [stats, train] = standardize(train_raw);
  const PreparedData data{train, apply_standardize(stats, test_raw), stats};

  const VariantKind kinds[] = {VariantKind::Baseline, VariantKind::P, VariantKind::T};
  std::vector<std::function<double()>> jobs;
  for (auto kind : kinds)
    for (std::uint64_t seed = 0; seed < kTrendSeeds; ++seed)
      jobs.push_back([&data, kind, seed] {
        TrainConfig tc;
        tc.seed = seed;
        return run_experiment(model(kind, 54, 3, 3, 2, 7, seed), tc, data)
            .log.rows.back()
            .test_acc;
      });
  std::vector<double> acc(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) acc[i] = jobs[i]();
  };
  const std::size_t threads =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  auto mean = [&](std::size_t v) {
    double s = 0;
    for (std::uint64_t seed = 0; seed < kTrendSeeds; ++seed) s += acc[v * kTrendSeeds + seed];
    return s / kTrendSeeds;
  };
  const double base = mean(0), p = mean(1), t = mean(2);
  const double gap = std::abs(p - base) * 100;
  line(6, gap <= kTrendGapPoints && base > kTrendFloor && p > kTrendFloor,
       "50k/50k trend P(K=3) vs Baseline",
       fmt("%zu/%zu rows, mean test acc over %llu seeds: Baseline %.4f, P %.4f, gap %.2f pts "
           "(need <= %.1f, both > %.2f)",
           data.train.size(), data.test.size(), static_cast<unsigned long long>(kTrendSeeds), base,
           p, gap, kTrendGapPoints, kTrendFloor));
  line(7, t * 100 <= p * 100 + kSharingSlackPoints, "sharing direction T(K=3) <= P(K=3)+0.5",
       fmt("mean test acc: T %.4f, P %.4f", t, p), true);
}

// ---------------------------------------------------------------------------

int run_cli(const std::string& args, const std::string& log) {
  const std::string cmd = std::string(BFI_CLI_PATH) + " " + args + " >" + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void sweep_determinism() {
  const auto dir = testing::temp_dir("accept_sweep");
  testing::write_synthetic_csv(dir + "/data.csv", 300, 12, 4, 8);
  std::ofstream(dir + "/sweep.ini")
      << "[data]\npath = " << dir << "/data.csv\nlabel_base = 1\n"
      << "[model]\nD = 12\nhidden = 32\nM = 4\nseed = 3\n"
      << "[train]\nbatch = 32\nepochs = 3\nseed = 5\n"
      << "[output]\ndir = " << dir << "/runs\n"
      << "[sweep]\nvariants = Baseline, P, Q, T, S\nK = 2, 3, 4\nC = 1..3\nL = 1, 2\n";
  const int a = run_cli("sweep " + dir + "/sweep.ini --jobs 2", dir + "/log1.txt");
  const std::string first = slurp(dir + "/runs/summary.csv");
  std::filesystem::remove_all(dir + "/runs");
  const int b = run_cli("sweep " + dir + "/sweep.ini --jobs 2", dir + "/log2.txt");
  const std::string second = slurp(dir + "/runs/summary.csv");
  const auto rows = std::count(first.begin(), first.end(), '\n') - 1;
  line(8, a == 0 && b == 0 && !first.empty() && first == second,
       "sweep summary.csv reproducible",
       fmt("%ld grid points, exit %d/%d, summary.csv %s", static_cast<long>(rows), a, b,
           first == second ? "byte-identical" : "DIFFERS"));
}

}  // namespace

int main() {
  std::printf("acceptance report\n");
  degeneracy();
  gradient_oracle();
  cost_closed_forms();
  flop_reduction();

  std::optional<Dataset> cov;
  const std::string path = covtype_path();
  if (std::filesystem::exists(path)) {
    try {
      LoadOptions opt;
      opt.label_base = 1;
      cov = load_delimited(path, opt);
      if (cov->dim() != 54) {
        std::printf("note: %s has %zu features, expected 54\n", path.c_str(), cov->dim());
        cov.reset();
      }
    } catch (const std::exception& e) {
      std::printf("note: cannot load %s: %s\n", path.c_str(), e.what());
    }
  }
  learning_sanity(cov);
  desk_scale(cov);
  sweep_determinism();

  std::printf("%s: %d hard criteria failed\n", hard_failures ? "FAILED" : "OK", hard_failures);
  return hard_failures ? 1 : 0;
}
