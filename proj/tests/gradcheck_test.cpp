#include <sstream>

#include <gtest/gtest.h>

#include "bfi/gradcheck.hpp"

namespace bfi {
namespace {

TEST(FiniteDiff, Examples) {
  const auto sq = finite_diff([](const std::vector<double>& t) { return t[0] * t[0]; }, {3.0}, 1e-5);
  EXPECT_NEAR(sq.grad[0], 6.0, 1e-9);
  const auto constant = finite_diff([](const std::vector<double>&) { return 4.0; }, {1.0, 2.0}, 1e-5);
  EXPECT_EQ(constant.grad, (std::vector<double>{0.0, 0.0}));
  const auto linear = finite_diff(
      [](const std::vector<double>& t) { return 2 * t[0] - 5 * t[1] + 0.5 * t[2]; },
      {0.3, -1.0, 8.0}, 1e-4);
  EXPECT_NEAR(linear.grad[0], 2.0, 1e-9);
  EXPECT_NEAR(linear.grad[1], -5.0, 1e-9);
  EXPECT_NEAR(linear.grad[2], 0.5, 1e-9);
  EXPECT_THROW(finite_diff([](const std::vector<double>&) { return 0.0; }, {1.0}, 0.0),
               ContractViolation);
}

TEST(FiniteDiff, NonFiniteProbesAreSkipped) {
  const auto r = finite_diff(
      [](const std::vector<double>& t) { return t[0] > 1.0 ? INFINITY : t[1]; },
      {1.0, 2.0}, 1e-3);
  EXPECT_TRUE(r.skipped[0]);
  EXPECT_FALSE(r.skipped[1]);
  EXPECT_NEAR(r.grad[1], 1.0, 1e-9);
}

TEST(CheckModel, EveryVariantPassesOverTenSeeds) {
  for (auto kind : VariantSpec::all)
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto report = check_model(tiny_config(kind, seed));
      std::ostringstream table;
      report.print(table);
      EXPECT_TRUE(report.pass()) << VariantSpec{kind}.name() << " seed " << seed << "\n"
                                 << table.str();
    }
}

TEST(CheckModel, ReportListsEveryBuffer) {
  const auto report = check_model(tiny_config(VariantKind::P, 1));
  // 2 layers x 2 blocks x (w, b) + 2 dense x (w, b) + head (w, b)
  EXPECT_EQ(report.buffers.size(), 8u + 4u + 2u);
  EXPECT_EQ(report.buffers.front().name, "bfi[0].block[0].w");
  EXPECT_EQ(report.buffers.back().name, "head.b");
  const auto shared = check_model(tiny_config(VariantKind::S, 1));
  EXPECT_EQ(shared.buffers.size(), 4u + 4u + 2u);
}

void expect_only_buffer_fails(VariantKind kind, const std::string& target) {
  GradCheckOptions opt;
  opt.corrupt = [&](Gradients<double>& g) {
    for_each_buffer(g, [&](const std::string& name, std::span<double> b) {
      if (name == target)
        for (auto& v : b) v = -v;
    });
  };
  const auto report = check_model(tiny_config(kind, 4), opt);
  EXPECT_FALSE(report.pass());
  for (const auto& b : report.buffers)
    EXPECT_EQ(b.pass, b.name != target) << b.name;
}

TEST(CheckModel, SignFlippedGradientFailsOnlyThatBuffer) {
  expect_only_buffer_fails(VariantKind::Baseline, "head.b");
  expect_only_buffer_fails(VariantKind::P, "bfi[1].block[0].b");
  expect_only_buffer_fails(VariantKind::T, "bfi[0].block[0].w");
  expect_only_buffer_fails(VariantKind::Q, "dense[0].w");
}

TEST(CheckModel, CsvHasOneRowPerBuffer) {
  const auto report = check_model(tiny_config(VariantKind::Q, 2));
  std::ostringstream os;
  report.write_csv(os);
  const std::string text = os.str();
  EXPECT_EQ(text.rfind("buffer,max_rel_err,max_abs_err,worst_index,pass\n", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')),
            report.buffers.size() + 1);
}

}  // namespace
}  // namespace bfi
