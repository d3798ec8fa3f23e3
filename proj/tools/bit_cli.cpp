// bit: command-line front end for training, evaluation and analysis.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bit/bit.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<bit::BackgroundMode> parse_backgrounds(const std::string& csv, std::uint64_t seed) {
  std::vector<bit::BackgroundMode> out;
  for (const auto& name : split_csv(csv)) out.push_back({bit::parse_tier(name), seed});
  if (out.empty()) throw bit::ConfigError("no backgrounds given");
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> out;
  for (const auto& s : split_csv(csv)) out.push_back(std::stoull(s));
  if (out.empty()) throw bit::ConfigError("no seeds given");
  return out;
}

struct TrainOverrides {
  std::string ablation;
  std::string aug;
  double aug_alpha = -1.0;
  int aug_pad = -1;
  std::int64_t seed = -1;
  std::int64_t steps = -1;
  bool dump_frames = false;
  bool detach_pseudo_action = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--ablation", ablation, "full, no_fwd, no_bwd, no_action, only_action or baseline");
    cmd->add_option("--aug", aug, "BiT-path augmentation: overlay, conv, shift or none");
    cmd->add_option("--aug-alpha", aug_alpha, "overlay blend weight in [0, 1]");
    cmd->add_option("--aug-pad", aug_pad, "shift padding in pixels");
    cmd->add_option("--seed", seed, "run seed");
    cmd->add_option("--steps", steps, "total environment steps");
    cmd->add_flag("--dump-frames", dump_frames, "write every rendered frame as png");
    cmd->add_flag("--detach-pseudo-action", detach_pseudo_action,
                  "stop forward/backward gradients at the pseudo action");
  }

  bit::RunConfig apply(bit::RunConfig cfg) const {
    if (!ablation.empty()) cfg.ablation = bit::parse_ablation(ablation);
    if (!aug.empty()) cfg.aug.kind = bit::parse_aug_kind(aug);
    if (aug_alpha >= 0.0) cfg.aug.alpha = aug_alpha;
    if (aug_pad >= 0) cfg.aug.pad = aug_pad;
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (steps >= 0) cfg.total_env_steps = steps;
    if (dump_frames) cfg.dump_frames = true;
    if (detach_pseudo_action) cfg.detach_pseudo_action = true;
    cfg.validate();
    return cfg;
  }
};

bit::RunConfig load_or_default(const std::string& path) {
  return path.empty() ? bit::RunConfig{} : bit::load_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BiT: bidirectional transition representation learning for pixel-based control"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train one agent");
  std::string train_config, train_out = "runs/run";
  TrainOverrides overrides;
  train->add_option("--config", train_config, "RunConfig JSON file")->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "run directory");
  overrides.add(train);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one or more backgrounds");
  std::string eval_ckpt, eval_backgrounds = "clean,easy,hard", eval_seeds = "1,2,3", eval_out;
  int eval_episodes = 10;
  std::uint64_t eval_bg_seed = 0;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--backgrounds", eval_backgrounds, "comma-separated tiers");
  eval->add_option("--episodes", eval_episodes, "episodes per seed and background");
  eval->add_option("--seeds", eval_seeds, "comma-separated evaluation seeds");
  eval->add_option("--background-seed", eval_bg_seed, "seed of the background generator");
  eval->add_option("--out", eval_out, "write the report as JSON here");

  // ablate / augstudy
  auto* ablate = app.add_subcommand("ablate", "six-variant ablation suite");
  auto* augstudy = app.add_subcommand("augstudy", "BiT vs SAC under overlay, conv and no augmentation");
  std::string suite_config, suite_out = "runs/suite", suite_seeds = "1,2,3";
  for (auto* cmd : {ablate, augstudy}) {
    cmd->add_option("--config", suite_config, "base RunConfig JSON file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", suite_out, "output directory");
    cmd->add_option("--seeds", suite_seeds, "comma-separated seeds shared by every row");
  }

  // saliency
  auto* saliency = app.add_subcommand("saliency", "input-gradient saliency maps of the encoder");
  std::string sal_ckpt, sal_background = "clean", sal_out = "saliency";
  std::uint64_t sal_seed = 0;
  int sal_steps = 10;
  saliency->add_option("--ckpt", sal_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  saliency->add_option("--background", sal_background, "clean, easy or hard");
  saliency->add_option("--out", sal_out, "output directory");
  saliency->add_option("--seed", sal_seed, "episode seed");
  saliency->add_option("--steps", sal_steps, "policy steps before taking the map");

  // plot
  auto* plot = app.add_subcommand("plot", "learning curves with across-seed median and band");
  std::vector<std::string> plot_runs;
  std::string plot_metric = "l_total", plot_out = "curve.png";
  plot->add_option("--runs", plot_runs, "run directories")->required();
  plot->add_option("--metric", plot_metric, "metric name (e.g. l_total, critic_loss, eval_return_hard)");
  plot->add_option("--out", plot_out, "png path; the table goes next to it with a .txt extension");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of L_BiT and critic gradients");
  bit::GradcheckOptions gc;
  gradcheck->add_option("--seed", gc.seed, "initialisation seed");
  gradcheck->add_option("--step", gc.step, "central-difference step");
  gradcheck->add_option("--tolerance", gc.tolerance, "maximum relative error");
  gradcheck->add_flag("--perfect-prediction", gc.perfect_prediction, "zero-loss construction");
  gradcheck->add_flag("--corrupt-bwd-sign", gc.corrupt_bwd_sign, "mutation check: flip l_bwd on the analytic side");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      auto cfg = overrides.apply(load_or_default(train_config));
      auto result = bit::train(cfg, train_out);
      std::cout << "finished " << result.env_steps << " env steps, " << result.iterations
                << " iterations in " << result.wall_seconds << " s\n"
                << "final checkpoint: " << result.final_checkpoint.string() << '\n';
    } else if (eval->parsed()) {
      auto report = bit::evaluate(eval_ckpt, parse_backgrounds(eval_backgrounds, eval_bg_seed), eval_episodes,
                                  parse_seeds(eval_seeds));
      for (const auto& r : report.results)
        std::cout << bit::to_string(r.background.tier) << ": mean " << r.mean << " std " << r.stddev
                  << " over " << r.episodes << " episodes\n";
      if (!eval_out.empty()) std::ofstream(eval_out) << nlohmann::json(report).dump(2) << '\n';
    } else if (ablate->parsed() || augstudy->parsed()) {
      const auto base = bit::load_config(suite_config);
      const auto seeds = parse_seeds(suite_seeds);
      auto table = ablate->parsed() ? bit::run_ablation_suite(base, seeds, suite_out)
                                    : bit::run_augmentation_study(base, seeds, suite_out);
      std::cout << table.format(base.eval_backgrounds);
    } else if (saliency->parsed()) {
      auto loaded = bit::load_checkpoint(sal_ckpt);
      auto& agent = *loaded.agent;
      bit::PointMassEnv env(agent.config().env);
      auto obs = env.reset(sal_seed, {bit::parse_tier(sal_background), 0});
      for (int i = 0; i < sal_steps && !env.done(); ++i) obs = env.step(agent.act(obs, true)).observation;
      auto map = bit::saliency_map(agent, obs);
      bit::write_saliency(sal_out, "saliency_" + sal_background, map);
      const auto& cfg = agent.config().env;
      const auto newest = obs.frames.narrow(0, 3 * (cfg.frame_stack - 1), 3).contiguous();
      bit::write_png_rgb_planar(fs::path(sal_out) / ("frame_" + sal_background + ".png"), cfg.width, cfg.height,
                                {newest.data_ptr<std::uint8_t>(), static_cast<std::size_t>(newest.numel())});
      std::cout << "wrote " << (fs::path(sal_out) / ("saliency_" + sal_background + ".png")).string() << '\n';
    } else if (plot->parsed()) {
      std::vector<fs::path> dirs(plot_runs.begin(), plot_runs.end());
      const fs::path image = plot_out;
      auto table = image;
      table.replace_extension(".txt");
      const auto points = bit::plot_curves(dirs, plot_metric, image, table);
      std::cout << "wrote " << image.string() << " and " << table.string() << " (" << points.size()
                << " points)\n";
    } else if (gradcheck->parsed()) {
      const auto report = bit::gradcheck(gc);
      std::cout << report.format();
      return report.passed() ? 0 : 1;
    }
  } catch (const bit::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const bit::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
