#pragma once

// Training loop and experiment protocols.
//
// Each environment step is followed (after warm-up) by one iteration:
//   omega x rl_update, then bit_update, then ema_update(epsilon).
// The baseline variant skips the last two.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "bit/agent.hpp"
#include "bit/config.hpp"
#include "bit/env_toy.hpp"
#include "bit/errors.hpp"
#include "bit/replay.hpp"
#include "bit/rng.hpp"

namespace bit {

namespace fs = std::filesystem;

class JsonlWriter {
 public:
  explicit JsonlWriter(const fs::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw ArgumentError("cannot open " + path.string() + " for writing");
  }
  void write(const nlohmann::json& record) { out_ << record.dump() << '\n'; }
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

inline std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

struct BackgroundResult {
  BackgroundMode background;
  double mean = 0.0;
  double stddev = 0.0;
  int episodes = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> returns;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BackgroundResult, background, mean, stddev, episodes, seeds, returns)

struct EvalReport {
  std::vector<BackgroundResult> results;

  const BackgroundResult& at(BackgroundTier tier) const {
    for (const auto& r : results)
      if (r.background.tier == tier) return r;
    throw ArgumentError("no evaluation result for background " + to_string(tier));
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalReport, results)

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw ArgumentError("median of an empty set");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::uint64_t eval_episode_seed(std::uint64_t seed, int episode) {
  return derive_seed(seed, 0xe7a1000 + static_cast<std::uint64_t>(episode));
}

/// Deterministic-action episodes; never updates parameters.
inline EvalReport evaluate(Agent& agent, const std::vector<BackgroundMode>& backgrounds, int episodes,
                           const std::vector<std::uint64_t>& seeds) {
  if (episodes < 1) throw ArgumentError("evaluate: episodes must be >= 1");
  if (seeds.empty()) throw ArgumentError("evaluate: need at least one seed");
  EvalReport report;
  PointMassEnv env(agent.config().env);
  for (const auto& bg : backgrounds) {
    BackgroundResult r;
    r.background = bg;
    r.seeds = seeds;
    for (auto seed : seeds)
      for (int ep = 0; ep < episodes; ++ep) {
        auto obs = env.reset(eval_episode_seed(seed, ep), bg);
        double ret = 0.0;
        for (bool done = false; !done;) {
          auto step = env.step(agent.act(obs, /*deterministic=*/true));
          ret += step.reward;
          done = step.done;
          obs = std::move(step.observation);
        }
        r.returns.push_back(ret);
      }
    r.episodes = static_cast<int>(r.returns.size());
    r.mean = mean_of(r.returns);
    r.stddev = stddev_of(r.returns);
    report.results.push_back(std::move(r));
  }
  return report;
}

inline EvalReport evaluate(const fs::path& checkpoint, const std::vector<BackgroundMode>& backgrounds,
                           int episodes, const std::vector<std::uint64_t>& seeds) {
  auto loaded = load_checkpoint(checkpoint);
  return evaluate(*loaded.agent, backgrounds, episodes, seeds);
}

inline fs::path checkpoint_path(const fs::path& run_dir, std::int64_t step) {
  return run_dir / ("ckpt_" + std::to_string(step) + ".bin");
}

struct TrainResult {
  fs::path run_dir;
  fs::path final_checkpoint;
  std::int64_t iterations = 0;
  std::int64_t env_steps = 0;
  double wall_seconds = 0.0;
};

/// Runs the full loop and writes config.json, train_log.jsonl, eval_log.jsonl,
/// ckpt_{step}.bin and summary.json into `run_dir`.
inline TrainResult train(const RunConfig& cfg, const fs::path& run_dir) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  torch::set_num_threads(1);
  fs::create_directories(run_dir);
  {
    std::ofstream out(run_dir / "config.json");
    out << nlohmann::json(cfg).dump(2) << '\n';
  }
  JsonlWriter train_log(run_dir / "train_log.jsonl");
  JsonlWriter eval_log(run_dir / "eval_log.jsonl");
  const std::string variant = to_string(cfg.ablation);
  const bool bit_enabled = cfg.ablation != Ablation::baseline;

  Agent agent(cfg);
  PointMassEnv env(cfg.env);
  if (cfg.dump_frames) env.enable_frame_dump(run_dir / "frames");
  ReplayBuffer replay(cfg.replay_capacity, {cfg.env.channels(), cfg.env.height, cfg.env.width},
                      derive_seed(cfg.seed, 0x4e91a7));
  Rng explore(derive_seed(cfg.seed, 0xe8b10e));
  augment::Augmenter rl_augmenter(cfg.aug, cfg.env.height, cfg.env.width);

  std::int64_t iteration = 0;
  std::int64_t episode = 0;
  auto save = [&](std::int64_t step) {
    const auto path = checkpoint_path(run_dir, step);
    save_checkpoint(path, agent, {static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(step)});
    return path;
  };
  auto run_eval = [&](std::int64_t step) {
    if (cfg.eval_episodes < 1 || cfg.eval_backgrounds.empty()) return;
    auto report = evaluate(agent, cfg.eval_backgrounds, cfg.eval_episodes, {cfg.seed});
    for (const auto& r : report.results)
      eval_log.write({{"step", step},
                      {"variant", variant},
                      {"background", to_string(r.background.tier)},
                      {"mean_return", r.mean},
                      {"std_return", r.stddev},
                      {"episodes", r.episodes}});
    eval_log.flush();
  };
  auto dump_divergence = [&](const std::exception& e, std::int64_t step) {
    save_checkpoint(run_dir / "divergence_dump.bin", agent,
                    {static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(step)});
    std::ofstream out(run_dir / "divergence.json");
    out << nlohmann::json{{"step", step}, {"iter", iteration}, {"error", e.what()}}.dump(2) << '\n';
    train_log.flush();
  };

  fs::path last_ckpt = save(0);
  auto obs = env.reset(derive_seed(cfg.seed, episode), cfg.train_background);
  double episode_return = 0.0;

  for (std::int64_t step = 0; step < cfg.total_env_steps; ++step) {
    Action action;
    if (step < cfg.initial_collect) {
      action = {explore.uniform(-1.0, 1.0), explore.uniform(-1.0, 1.0)};
    } else {
      action = agent.act(obs, /*deterministic=*/false);
    }
    auto result = env.step(action);
    replay.push({obs, action, result.reward, result.observation, result.done});
    episode_return += result.reward;
    if (result.done) {
      train_log.write({{"kind", "episode"}, {"step", step + 1}, {"variant", variant},
                       {"episode", episode}, {"return", episode_return}});
      ++episode;
      episode_return = 0.0;
      obs = env.reset(derive_seed(cfg.seed, episode), cfg.train_background);
    } else {
      obs = std::move(result.observation);
    }

    if (step + 1 >= cfg.initial_collect && replay.size() >= cfg.batch_size) {
      ++iteration;
      try {
        for (int u = 0; u < cfg.omega; ++u) {
          auto batch = replay.sample(cfg.batch_size);
          torch::Tensor rl_obs;
          if (cfg.augment_rl_path)
            rl_obs = rl_augmenter(batch.obs, derive_seed(0x41a9, static_cast<std::uint64_t>(iteration * cfg.omega + u)));
          auto r = agent.sac().rl_update(batch, rl_obs);
          train_log.write({{"kind", "rl"}, {"iter", iteration}, {"step", step + 1}, {"variant", variant},
                           {"critic_loss", r.critic_loss}, {"actor_loss", r.actor_loss},
                           {"alpha_loss", r.alpha_loss}, {"alpha", r.alpha}, {"entropy", r.entropy}});
        }
        if (bit_enabled) {
          auto b = agent.bit().bit_update(replay.sample(cfg.batch_size));
          train_log.write({{"kind", "bit"}, {"iter", iteration}, {"step", step + 1}, {"variant", variant},
                           {"l_action", b.l_action}, {"l_fwd", b.l_fwd}, {"l_bwd", b.l_bwd},
                           {"l_total", b.l_total}, {"z_batch_variance", b.z_batch_variance}});
          agent.extractor().ema_update(cfg.epsilon);
          train_log.write({{"kind", "ema"}, {"iter", iteration}, {"step", step + 1}, {"variant", variant},
                           {"epsilon", cfg.epsilon}});
        }
      } catch (const DivergenceError& e) {
        dump_divergence(e, step + 1);
        throw;
      }
    }

    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
      train_log.flush();
      run_eval(step + 1);
      last_ckpt = save(step + 1);
    }
  }
  if (cfg.total_env_steps > 0 && (cfg.eval_every <= 0 || cfg.total_env_steps % cfg.eval_every != 0)) {
    run_eval(cfg.total_env_steps);
    last_ckpt = save(cfg.total_env_steps);
  }
  train_log.flush();

  TrainResult result{run_dir, last_ckpt, iteration, cfg.total_env_steps,
                     std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
  std::ofstream summary(run_dir / "summary.json");
  summary << nlohmann::json{{"final_checkpoint", last_ckpt.filename().string()},
                            {"iterations", result.iterations},
                            {"env_steps", result.env_steps},
                            {"wall_seconds", result.wall_seconds}}
                 .dump(2)
          << '\n';
  return result;
}

/// Re-uses a finished run in `run_dir` when its config.json matches `cfg`.
inline TrainResult train_or_reuse(const RunConfig& cfg, const fs::path& run_dir) {
  const auto summary = run_dir / "summary.json";
  const auto config = run_dir / "config.json";
  if (fs::exists(summary) && fs::exists(config)) {
    std::ifstream in(config);
    const auto previous = nlohmann::json::parse(in);
    if (previous == nlohmann::json(cfg)) {
      std::ifstream s(summary);
      const auto j = nlohmann::json::parse(s);
      return {run_dir, run_dir / j.at("final_checkpoint").get<std::string>(),
              j.at("iterations").get<std::int64_t>(), j.at("env_steps").get<std::int64_t>(),
              j.at("wall_seconds").get<double>()};
    }
  }
  return train(cfg, run_dir);
}

struct SuiteRow {
  std::string label;
  Ablation variant = Ablation::full;
  AugKind aug = AugKind::none;
  std::vector<std::uint64_t> seeds;
  std::vector<fs::path> run_dirs;
  // One report per seed, evaluated with that seed's final checkpoint.
  std::vector<EvalReport> per_seed;

  /// Median over seeds of the per-seed mean return on `tier`.
  double median_return(BackgroundTier tier) const {
    std::vector<double> means;
    for (const auto& r : per_seed) means.push_back(r.at(tier).mean);
    return median_of(means);
  }
};

struct SuiteTable {
  std::vector<SuiteRow> rows;

  std::string format(const std::vector<BackgroundMode>& backgrounds) const {
    std::ostringstream os;
    os << "variant             aug      ";
    for (const auto& bg : backgrounds) os << "  " << to_string(bg.tier) << "(median)";
    os << '\n';
    for (const auto& row : rows) {
      char head[64];
      std::snprintf(head, sizeof(head), "%-20s%-9s", row.label.c_str(),
                    nlohmann::json(row.aug).get<std::string>().c_str());
      os << head;
      for (const auto& bg : backgrounds) {
        char cell[32];
        std::snprintf(cell, sizeof(cell), "  %13.2f", row.median_return(bg.tier));
        os << cell;
      }
      os << '\n';
    }
    return os.str();
  }
};

inline nlohmann::json to_json_table(const SuiteTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    nlohmann::json dirs = nlohmann::json::array();
    for (const auto& d : r.run_dirs) dirs.push_back(d.string());
    rows.push_back({{"label", r.label}, {"variant", r.variant}, {"aug", r.aug}, {"seeds", r.seeds},
                    {"run_dirs", dirs}, {"per_seed", r.per_seed}});
  }
  return {{"rows", rows}};
}

struct SuiteEntry {
  std::string label;
  RunConfig config;
};

inline SuiteTable run_suite(const std::vector<SuiteEntry>& entries, const std::vector<std::uint64_t>& seeds,
                            const fs::path& out_dir) {
  if (seeds.empty()) throw ArgumentError("suite: need at least one seed");
  SuiteTable table;
  for (const auto& entry : entries) {
    SuiteRow row;
    row.label = entry.label;
    row.variant = entry.config.ablation;
    row.aug = entry.config.aug.kind;
    row.seeds = seeds;
    for (auto seed : seeds) {
      auto cfg = entry.config;
      cfg.seed = seed;
      const auto dir = out_dir / (entry.label + "_seed" + std::to_string(seed));
      auto result = train_or_reuse(cfg, dir);
      row.run_dirs.push_back(dir);
      row.per_seed.push_back(evaluate(result.final_checkpoint, cfg.eval_backgrounds,
                                      std::max(cfg.eval_episodes, 1), {seed}));
    }
    table.rows.push_back(std::move(row));
  }
  fs::create_directories(out_dir);
  std::ofstream(out_dir / "table.json") << to_json_table(table).dump(2) << '\n';
  std::ofstream(out_dir / "table.txt") << table.format(entries.front().config.eval_backgrounds);
  return table;
}

/// The six loss-mask variants with shared seeds.
inline SuiteTable run_ablation_suite(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                     const fs::path& out_dir) {
  std::vector<SuiteEntry> entries;
  for (auto v : {Ablation::full, Ablation::no_fwd, Ablation::no_bwd, Ablation::no_action,
                 Ablation::only_action, Ablation::baseline}) {
    auto cfg = base;
    cfg.ablation = v;
    entries.push_back({to_string(v), cfg});
  }
  return run_suite(entries, seeds, out_dir);
}

/// BiT and the SAC baseline under overlay, random convolution and no augmentation.
/// For the baseline the augmentation goes on the RL path since it has no BiT path.
inline SuiteTable run_augmentation_study(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                         const fs::path& out_dir) {
  std::vector<SuiteEntry> entries;
  for (auto kind : {AugKind::overlay, AugKind::random_conv, AugKind::none}) {
    const auto aug_name = to_string(kind);
    auto bit_cfg = base;
    bit_cfg.ablation = Ablation::full;
    bit_cfg.aug.kind = kind;
    bit_cfg.augment_rl_path = false;
    entries.push_back({"bit_" + aug_name, bit_cfg});
    auto sac_cfg = base;
    sac_cfg.ablation = Ablation::baseline;
    sac_cfg.aug.kind = kind;
    sac_cfg.augment_rl_path = kind != AugKind::none;
    entries.push_back({"baseline_" + aug_name, sac_cfg});
  }
  return run_suite(entries, seeds, out_dir);
}

}  // namespace bit
