#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "bit/trainer.hpp"
#include "tiny.hpp"

namespace bit {
namespace {

using testing::TempDir;
using testing::tiny_config;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Update records (rl / bit / ema) grouped by iteration, in file order.
std::map<std::int64_t, std::vector<std::string>> updates_by_iter(const fs::path& run) {
  std::map<std::int64_t, std::vector<std::string>> out;
  for (const auto& rec : read_jsonl(run / "train_log.jsonl")) {
    const auto kind = rec.at("kind").get<std::string>();
    if (kind == "episode") continue;
    out[rec.at("iter").get<std::int64_t>()].push_back(kind);
  }
  return out;
}

TEST(Train, WritesTheRunDirectory) {
  TempDir dir("train_layout");
  auto cfg = tiny_config();
  auto r = train(cfg, dir.path());
  for (const char* f : {"config.json", "train_log.jsonl", "eval_log.jsonl", "summary.json", "ckpt_0.bin",
                        "ckpt_20.bin", "ckpt_40.bin"})
    EXPECT_TRUE(fs::exists(dir.path() / f)) << f;
  EXPECT_EQ(r.final_checkpoint, dir.path() / "ckpt_40.bin");
  EXPECT_EQ(r.env_steps, 40);
  // Warm-up ends after initial_collect steps, then one iteration per env step.
  EXPECT_EQ(r.iterations, cfg.total_env_steps - cfg.initial_collect + 1);
  std::ifstream in(dir.path() / "config.json");
  EXPECT_EQ(nlohmann::json::parse(in), nlohmann::json(cfg));
}

TEST(Train, UpdateOrderPerIteration) {
  TempDir dir("train_order");
  auto cfg = tiny_config();
  cfg.omega = 3;
  train(cfg, dir.path());
  const auto iters = updates_by_iter(dir.path());
  ASSERT_FALSE(iters.empty());
  const std::vector<std::string> expected{"rl", "rl", "rl", "bit", "ema"};
  for (const auto& [iter, kinds] : iters) EXPECT_EQ(kinds, expected) << "iteration " << iter;
}

TEST(Train, BaselineLogsNoBitOrEma) {
  TempDir dir("train_baseline");
  auto cfg = tiny_config();
  cfg.ablation = Ablation::baseline;
  train(cfg, dir.path());
  int rl = 0;
  for (const auto& rec : read_jsonl(dir.path() / "train_log.jsonl")) {
    const auto kind = rec.at("kind").get<std::string>();
    EXPECT_TRUE(kind == "rl" || kind == "episode") << kind;
    rl += kind == "rl";
    EXPECT_EQ(rec.at("variant"), "baseline");
  }
  EXPECT_EQ(rl, cfg.omega * (cfg.total_env_steps - cfg.initial_collect + 1));
}

TEST(Train, VariantEchoedInEveryLogLine) {
  TempDir dir("train_variant");
  auto cfg = tiny_config();
  cfg.ablation = Ablation::no_bwd;
  train(cfg, dir.path());
  for (const auto* f : {"train_log.jsonl", "eval_log.jsonl"})
    for (const auto& rec : read_jsonl(dir.path() / f)) EXPECT_EQ(rec.at("variant"), "no_bwd");
}

TEST(Train, IdenticalConfigIdenticalRun) {
  TempDir a("train_det_a"), b("train_det_b");
  auto cfg = tiny_config(4);
  train(cfg, a.path());
  train(cfg, b.path());
  EXPECT_EQ(slurp(a.path() / "train_log.jsonl"), slurp(b.path() / "train_log.jsonl"));
  EXPECT_EQ(file_hash(a.path() / "ckpt_40.bin"), file_hash(b.path() / "ckpt_40.bin"));
  auto c = tiny_config(5);
  TempDir other("train_det_c");
  train(c, other.path());
  EXPECT_NE(file_hash(a.path() / "ckpt_40.bin"), file_hash(other.path() / "ckpt_40.bin"));
}

TEST(Train, TrainOrReuseSkipsMatchingRun) {
  TempDir dir("train_reuse");
  auto cfg = tiny_config();
  train(cfg, dir.path());
  const auto stamp = fs::last_write_time(dir.path() / "train_log.jsonl");
  auto r = train_or_reuse(cfg, dir.path());
  EXPECT_EQ(fs::last_write_time(dir.path() / "train_log.jsonl"), stamp);
  EXPECT_EQ(r.final_checkpoint, dir.path() / "ckpt_40.bin");
  cfg.seed = 9;
  train_or_reuse(cfg, dir.path());
  std::ifstream in(dir.path() / "config.json");
  EXPECT_EQ(nlohmann::json::parse(in).at("seed"), 9);
}

TEST(Train, DivergenceAbortsWithDump) {
  TempDir dir("train_diverge");
  auto cfg = tiny_config();
  cfg.bit_lr = 1e30;
  cfg.sac.critic_lr = 1e30;
  EXPECT_THROW(train(cfg, dir.path()), DivergenceError);
  EXPECT_TRUE(fs::exists(dir.path() / "divergence_dump.bin"));
  std::ifstream in(dir.path() / "divergence.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_GE(j.at("step").get<int>(), cfg.initial_collect);
  EXPECT_FALSE(fs::exists(dir.path() / "summary.json"));
}

TEST(Train, InvalidConfigRejected) {
  TempDir dir("train_invalid");
  auto cfg = tiny_config();
  cfg.omega = 0;
  EXPECT_THROW(train(cfg, dir.path()), ConfigError);
  cfg = tiny_config();
  cfg.epsilon = 1.5;
  EXPECT_THROW(train(cfg, dir.path()), ConfigError);
}

TEST(Config, JsonRoundTripAndLoad) {
  TempDir dir("config");
  auto cfg = tiny_config(17);
  cfg.ablation = Ablation::only_action;
  cfg.aug.kind = AugKind::random_shift;
  std::ofstream(dir.path() / "c.json") << nlohmann::json(cfg).dump();
  const auto back = load_config((dir.path() / "c.json").string());
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(cfg));
  // Missing fields fall back to defaults.
  std::ofstream(dir.path() / "partial.json") << R"({"omega": 4, "aug": {"kind": "conv"}})";
  const auto partial = load_config((dir.path() / "partial.json").string());
  EXPECT_EQ(partial.omega, 4);
  EXPECT_EQ(partial.aug.kind, AugKind::random_conv);
  EXPECT_EQ(partial.env.height, 64);
  std::ofstream(dir.path() / "bad.json") << "{";
  EXPECT_THROW(load_config((dir.path() / "bad.json").string()), ConfigError);
  EXPECT_THROW(load_config((dir.path() / "none.json").string()), ConfigError);
  EXPECT_THROW(parse_ablation("w/o"), ConfigError);
  EXPECT_THROW(parse_tier("video"), ConfigError);
  EXPECT_THROW(parse_aug_kind("cutout"), ConfigError);
}

TEST(Checkpoint, RoundTripRestoresEveryTensor) {
  TempDir dir("ckpt");
  auto cfg = tiny_config(3);
  Agent agent(cfg);
  auto batch = testing::env_batch(cfg, 8, 1);
  agent.sac().rl_update(batch);
  agent.bit().bit_update(batch);
  agent.extractor().ema_update(0.5);
  save_checkpoint(dir.path() / "a.bin", agent, {12, 34});
  auto loaded = load_checkpoint(dir.path() / "a.bin");
  EXPECT_EQ(loaded.meta.iteration, 12u);
  EXPECT_EQ(loaded.meta.env_step, 34u);
  EXPECT_EQ(loaded.agent->parameter_hash(), agent.parameter_hash());
  EXPECT_EQ(nlohmann::json(loaded.agent->config()), nlohmann::json(cfg));
  std::ofstream(dir.path() / "junk.bin") << "junk";
  EXPECT_THROW(load_checkpoint(dir.path() / "junk.bin"), ArgumentError);
}

TEST(Evaluate, ReturnsBoundedAndRepeatable) {
  TempDir dir("eval");
  auto cfg = tiny_config();
  auto r = train(cfg, dir.path());
  const std::vector<BackgroundMode> bgs{{BackgroundTier::clean, 0}, {BackgroundTier::hard, 1}};
  const auto a = evaluate(r.final_checkpoint, bgs, 2, {1, 2, 3});
  const auto b = evaluate(r.final_checkpoint, bgs, 2, {1, 2, 3});
  EXPECT_EQ(nlohmann::json(a), nlohmann::json(b));
  const double bound = -2.0 * std::sqrt(2.0) * cfg.env.horizon;
  for (const auto& res : a.results) {
    EXPECT_EQ(res.episodes, 6);
    EXPECT_EQ(res.returns.size(), 6u);
    for (double ret : res.returns) {
      EXPECT_LE(ret, 0.0);
      EXPECT_GE(ret, bound);
    }
    EXPECT_NEAR(res.mean, mean_of(res.returns), 1e-12);
  }
  EXPECT_EQ(a.at(BackgroundTier::hard).background.seed, 1u);
  EXPECT_THROW(a.at(BackgroundTier::easy), ArgumentError);
}

TEST(Evaluate, NeverMutatesTheAgent) {
  auto cfg = tiny_config();
  Agent agent(cfg);
  const auto before = agent.parameter_hash();
  evaluate(agent, {{BackgroundTier::easy, 0}, {BackgroundTier::hard, 0}}, 2, {1});
  EXPECT_EQ(agent.parameter_hash(), before);
}

TEST(Evaluate, RejectsBadArguments) {
  Agent agent(tiny_config());
  EXPECT_THROW(evaluate(agent, {{}}, 0, {1}), ArgumentError);
  EXPECT_THROW(evaluate(agent, {{}}, 1, {}), ArgumentError);
}

TEST(Statistics, MeanStdMedian) {
  EXPECT_DOUBLE_EQ(mean_of({1.0, 2.0, 6.0}), 3.0);
  EXPECT_DOUBLE_EQ(stddev_of({1.0, 3.0}), 1.0);
  EXPECT_DOUBLE_EQ(median_of({5.0, 1.0, 3.0}), 3.0);
  EXPECT_DOUBLE_EQ(median_of({4.0, 1.0, 3.0, 2.0}), 2.5);
  EXPECT_THROW(median_of({}), ArgumentError);
}

RunConfig suite_config() {
  auto cfg = tiny_config();
  cfg.total_env_steps = 24;
  cfg.eval_every = 0;
  cfg.eval_backgrounds = {{BackgroundTier::clean, 0}, {BackgroundTier::hard, 0}};
  return cfg;
}

TEST(Suites, AblationHasSixRowsWithSharedSeeds) {
  TempDir dir("ablate");
  auto table = run_ablation_suite(suite_config(), {1, 2}, dir.path());
  ASSERT_EQ(table.rows.size(), 6u);
  const std::vector<Ablation> order{Ablation::full, Ablation::no_fwd, Ablation::no_bwd,
                                    Ablation::no_action, Ablation::only_action, Ablation::baseline};
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& row = table.rows[i];
    EXPECT_EQ(row.variant, order[i]);
    EXPECT_EQ(row.seeds, (std::vector<std::uint64_t>{1, 2}));
    ASSERT_EQ(row.per_seed.size(), 2u);
    for (const auto& run : row.run_dirs)
      for (const auto& rec : read_jsonl(run / "train_log.jsonl")) EXPECT_EQ(rec.at("variant"), to_string(order[i]));
    EXPECT_TRUE(std::isfinite(row.median_return(BackgroundTier::hard)));
  }
  EXPECT_TRUE(fs::exists(dir.path() / "table.json"));
  const auto text = slurp(dir.path() / "table.txt");
  EXPECT_NE(text.find("only_action"), std::string::npos);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 7);
}

TEST(Suites, AugmentationStudyHasSixRows) {
  TempDir dir("augstudy");
  auto table = run_augmentation_study(suite_config(), {1}, dir.path());
  ASSERT_EQ(table.rows.size(), 6u);
  int bit_rows = 0;
  for (const auto& row : table.rows) {
    bit_rows += row.variant == Ablation::full;
    std::ifstream in(row.run_dirs[0] / "config.json");
    const auto cfg = nlohmann::json::parse(in).get<RunConfig>();
    EXPECT_EQ(cfg.aug.kind, row.aug);
    EXPECT_EQ(cfg.augment_rl_path, row.variant == Ablation::baseline && row.aug != AugKind::none);
  }
  EXPECT_EQ(bit_rows, 3);
}

}  // namespace
}  // namespace bit
