#include <cmath>

#include <gtest/gtest.h>

#include "bit/analysis.hpp"
#include "tiny.hpp"

namespace bit {
namespace {

using testing::TempDir;
using testing::tiny_config;

TEST(Saliency, ShapeRangeAndPeak) {
  auto cfg = tiny_config();
  Agent agent(cfg);
  PointMassEnv env(cfg.env);
  auto obs = env.reset(3, {BackgroundTier::hard, 0});
  auto map = saliency_map(agent, obs);
  EXPECT_EQ(map.heatmap.sizes(), (std::vector<std::int64_t>{cfg.env.height, cfg.env.width}));
  EXPECT_GE(map.heatmap.min().item<float>(), 0.0f);
  EXPECT_FLOAT_EQ(map.heatmap.max().item<float>(), 1.0f);
}

TEST(Saliency, IdenticalInputsIdenticalMaps) {
  auto cfg = tiny_config();
  Agent agent(cfg);
  PointMassEnv env(cfg.env);
  auto obs = env.reset(3, {BackgroundTier::easy, 0});
  EXPECT_TRUE(saliency_map(agent, obs).heatmap.equal(saliency_map(agent, obs).heatmap));
}

TEST(Saliency, ConstantEncoderGivesZeroMap) {
  // Zero weights before the layer norm make the output its (constant) shift.
  auto cfg = tiny_config();
  Agent agent(cfg);
  {
    torch::NoGradGuard no_grad;
    agent.extractor().encoder()->fc->weight.zero_();
  }
  PointMassEnv env(cfg.env);
  auto map = saliency_map(agent, env.reset(1, {}));
  EXPECT_EQ(map.heatmap.abs().max().item<float>(), 0.0f);
}

TEST(Saliency, RejectsBatchedInput) {
  Agent agent(tiny_config());
  EXPECT_THROW(saliency_map(agent.extractor().encoder(), torch::rand({1, 6, 16, 16})), ArgumentError);
}

TEST(Saliency, WritesPngAndRawArray) {
  TempDir dir("saliency");
  auto heat = torch::linspace(0.0, 1.0, 12).reshape({3, 4}).to(torch::kFloat32);
  write_saliency(dir.path(), "s", {heat});
  EXPECT_TRUE(fs::exists(dir.path() / "s.png"));
  std::ifstream raw(dir.path() / "s.f32", std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(raw)), {});
  ASSERT_EQ(bytes.size(), 48u);
  float last;
  std::memcpy(&last, bytes.data() + 44, 4);
  EXPECT_FLOAT_EQ(last, 1.0f);
}

// Writes a fake run with the given (step, value) pairs for `metric`.
void fake_run(const fs::path& dir, const std::vector<std::pair<int, double>>& points) {
  fs::create_directories(dir);
  JsonlWriter log(dir / "train_log.jsonl");
  for (const auto& [step, v] : points)
    log.write({{"kind", "bit"}, {"iter", step}, {"step", step}, {"variant", "full"}, {"l_total", v}});
  JsonlWriter eval(dir / "eval_log.jsonl");
  eval.write({{"step", 100}, {"variant", "full"}, {"background", "hard"}, {"mean_return", -50.0}});
}

TEST(PlotCurves, EmptyRunListIsUsageError) {
  TempDir dir("plot_empty");
  EXPECT_THROW(plot_curves({}, "l_total", dir.path() / "a.png", dir.path() / "a.txt"), UsageError);
}

TEST(PlotCurves, MissingMetricListsAvailable) {
  TempDir dir("plot_missing");
  fake_run(dir.path() / "r0", {{1, 0.5}});
  try {
    plot_curves({dir.path() / "r0"}, "nope", dir.path() / "a.png", dir.path() / "a.txt");
    FAIL() << "expected an error";
  } catch (const ArgumentError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("l_total"), std::string::npos);
    EXPECT_NE(msg.find("eval_return_hard"), std::string::npos);
  }
}

TEST(PlotCurves, SingleRunMonotoneSteps) {
  TempDir dir("plot_one");
  fake_run(dir.path() / "r0", {{5, 3.0}, {1, 4.0}, {3, 3.5}, {9, 1.0}});
  auto pts = plot_curves({dir.path() / "r0"}, "l_total", dir.path() / "c.png", dir.path() / "c.txt");
  ASSERT_EQ(pts.size(), 4u);
  for (std::size_t i = 1; i < pts.size(); ++i) EXPECT_LT(pts[i - 1].step, pts[i].step);
  EXPECT_DOUBLE_EQ(pts[0].median, 4.0);
  EXPECT_TRUE(fs::exists(dir.path() / "c.png"));
  // Table rows follow the same order.
  std::ifstream in(dir.path() / "c.txt");
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::int64_t prev = -1, step;
  while (in >> step) {
    EXPECT_GT(step, prev);
    prev = step;
    std::getline(in, line);
  }
  EXPECT_EQ(prev, 9);
}

TEST(PlotCurves, BandOrderStatisticsAcrossSeeds) {
  TempDir dir("plot_three");
  fake_run(dir.path() / "a", {{1, 1.0}, {2, 5.0}, {3, 2.0}});
  fake_run(dir.path() / "b", {{1, 3.0}, {2, 4.0}, {3, 9.0}});
  fake_run(dir.path() / "c", {{1, 2.0}, {2, 6.0}});
  auto pts = plot_curves({dir.path() / "a", dir.path() / "b", dir.path() / "c"}, "l_total",
                         dir.path() / "c.png", dir.path() / "c.txt");
  ASSERT_EQ(pts.size(), 3u);
  for (const auto& p : pts) {
    EXPECT_LE(p.min, p.median);
    EXPECT_LE(p.median, p.max);
  }
  EXPECT_DOUBLE_EQ(pts[0].median, 2.0);
  EXPECT_DOUBLE_EQ(pts[1].min, 4.0);
  EXPECT_DOUBLE_EQ(pts[1].max, 6.0);
  EXPECT_DOUBLE_EQ(pts[2].median, 5.5);  // only two runs reach step 3
  EXPECT_TRUE(std::isnan(pts[2].per_run[2]));
}

TEST(PlotCurves, BinsLongSeries) {
  TempDir dir("plot_bins");
  std::vector<std::pair<int, double>> pts;
  for (int s = 1; s <= 1000; ++s) pts.emplace_back(s, std::sin(0.01 * s));
  fake_run(dir.path() / "r", pts);
  auto out = plot_curves({dir.path() / "r"}, "l_total", dir.path() / "p.png", dir.path() / "p.txt", 50);
  EXPECT_EQ(out.size(), 50u);
  EXPECT_EQ(out.back().step, 1000);
}

TEST(PlotCurves, EvalMetricFromEvalLog) {
  TempDir dir("plot_eval");
  fake_run(dir.path() / "r", {{1, 1.0}});
  auto out = plot_curves({dir.path() / "r"}, "eval_return_hard", dir.path() / "p.png", dir.path() / "p.txt");
  ASSERT_EQ(out.size(), 1u);
  EXPECT_DOUBLE_EQ(out[0].median, -50.0);
}

TEST(Gradcheck, RandomInitPasses) {
  const auto report = gradcheck({});
  EXPECT_TRUE(report.passed()) << report.format();
  EXPECT_EQ(report.blocks.size(), 9u);
  for (const auto& b : report.blocks) {
    EXPECT_LT(b.max_rel_error, 1e-4) << b.objective << "/" << b.block;
    EXPECT_GT(b.max_abs_analytic, 0.0) << b.objective << "/" << b.block;
  }
  EXPECT_GT(report.bit_loss, 0.0);
}

TEST(Gradcheck, PerfectPredictionIsZeroLossZeroGradient) {
  GradcheckOptions opt;
  opt.perfect_prediction = true;
  const auto report = gradcheck(opt);
  EXPECT_TRUE(report.passed()) << report.format();
  EXPECT_EQ(report.bit_loss, 0.0);
  EXPECT_EQ(report.critic_loss, 0.0);
  for (const auto& b : report.blocks) EXPECT_EQ(b.max_abs_analytic, 0.0) << b.objective << "/" << b.block;
}

TEST(Gradcheck, CorruptedBackwardSignIsCaught) {
  GradcheckOptions opt;
  opt.corrupt_bwd_sign = true;
  const auto report = gradcheck(opt);
  EXPECT_FALSE(report.passed());
  EXPECT_FALSE(report.find("L_BiT", "backward_model").passed);
  EXPECT_TRUE(report.find("L_BiT", "forward_model").passed);
  EXPECT_TRUE(report.find("critic", "q1").passed);
  EXPECT_THROW(report.find("L_BiT", "nope"), ArgumentError);
}

}  // namespace
}  // namespace bit
