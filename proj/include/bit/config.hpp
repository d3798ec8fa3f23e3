#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bit/errors.hpp"

namespace bit {

enum class BackgroundTier { clean, easy, hard };

NLOHMANN_JSON_SERIALIZE_ENUM(BackgroundTier, {
  {BackgroundTier::clean, "clean"},
  {BackgroundTier::easy, "easy"},
  {BackgroundTier::hard, "hard"},
})

struct BackgroundMode {
  BackgroundTier tier = BackgroundTier::clean;
  std::uint64_t seed = 0;

  bool operator==(const BackgroundMode&) const = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BackgroundMode, tier, seed)

inline std::string to_string(BackgroundTier t) { return nlohmann::json(t).get<std::string>(); }

inline BackgroundTier parse_tier(std::string_view name) {
  if (name == "clean") return BackgroundTier::clean;
  if (name == "easy") return BackgroundTier::easy;
  if (name == "hard") return BackgroundTier::hard;
  throw ConfigError("unknown background '" + std::string(name) + "' (expected clean, easy or hard)");
}

struct EnvConfig {
  int height = 64;
  int width = 64;
  int frame_stack = 3;
  double dt = 0.1;
  double force_scale = 1.0;
  double v_max = 1.0;
  int horizon = 100;

  void validate() const {
    if (height <= 0 || width <= 0 || frame_stack <= 0)
      throw ConfigError("env: height, width and frame_stack must be positive");
    if (horizon <= 0) throw ConfigError("env: horizon must be positive");
    if (!(dt > 0.0) || !(v_max > 0.0)) throw ConfigError("env: dt and v_max must be positive");
  }
  int channels() const { return 3 * frame_stack; }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EnvConfig, height, width, frame_stack, dt,
                                                force_scale, v_max, horizon)

enum class AugKind { none, overlay, random_conv, random_shift };

NLOHMANN_JSON_SERIALIZE_ENUM(AugKind, {
  {AugKind::none, "none"},
  {AugKind::overlay, "overlay"},
  {AugKind::random_conv, "conv"},
  {AugKind::random_shift, "shift"},
})

inline AugKind parse_aug_kind(std::string_view name) {
  if (name == "none") return AugKind::none;
  if (name == "overlay") return AugKind::overlay;
  if (name == "conv") return AugKind::random_conv;
  if (name == "shift") return AugKind::random_shift;
  throw ConfigError("unknown augmentation '" + std::string(name) +
                    "' (expected overlay, conv, shift or none)");
}

inline std::string to_string(AugKind k) { return nlohmann::json(k).get<std::string>(); }

struct AugmentationSpec {
  AugKind kind = AugKind::overlay;
  double alpha = 0.5;
  int pad = 4;
  std::uint64_t seed = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugmentationSpec, kind, alpha, pad, seed)

struct ModelConfig {
  int filters = 32;
  int d_z = 64;
  int d_p = 64;
  int proj_hidden = 128;
  int head_hidden = 128;
  int sac_hidden = 256;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, filters, d_z, d_p, proj_hidden,
                                                head_hidden, sac_hidden)

struct SacConfig {
  double gamma = 0.99;
  double critic_tau = 0.01;
  double critic_lr = 1e-3;
  double actor_lr = 1e-3;
  double alpha_lr = 1e-3;
  double init_alpha = 0.1;
  double log_std_min = -10.0;
  double log_std_max = 2.0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SacConfig, gamma, critic_tau, critic_lr, actor_lr,
                                                alpha_lr, init_alpha, log_std_min, log_std_max)

enum class Ablation { full, no_fwd, no_bwd, no_action, only_action, baseline };

NLOHMANN_JSON_SERIALIZE_ENUM(Ablation, {
  {Ablation::full, "full"},
  {Ablation::no_fwd, "no_fwd"},
  {Ablation::no_bwd, "no_bwd"},
  {Ablation::no_action, "no_action"},
  {Ablation::only_action, "only_action"},
  {Ablation::baseline, "baseline"},
})

inline std::string to_string(Ablation a) { return nlohmann::json(a).get<std::string>(); }

inline Ablation parse_ablation(std::string_view name) {
  for (auto a : {Ablation::full, Ablation::no_fwd, Ablation::no_bwd, Ablation::no_action,
                 Ablation::only_action, Ablation::baseline})
    if (to_string(a) == name) return a;
  throw ConfigError("unknown ablation '" + std::string(name) + "'");
}

struct RunConfig {
  EnvConfig env;
  ModelConfig model;
  SacConfig sac;
  AugmentationSpec aug;
  BackgroundMode train_background;
  std::vector<BackgroundMode> eval_backgrounds = {
      {BackgroundTier::clean, 0}, {BackgroundTier::easy, 0}, {BackgroundTier::hard, 0}};
  Ablation ablation = Ablation::full;

  int omega = 2;
  double epsilon = 0.05;
  double bit_lr = 1e-3;
  bool detach_pseudo_action = false;
  // Augment the RL path too; only the augmentation study turns this on for its SAC rows.
  bool augment_rl_path = false;

  std::int64_t total_env_steps = 100000;
  std::int64_t initial_collect = 1000;
  int batch_size = 128;
  std::int64_t replay_capacity = 100000;
  std::int64_t eval_every = 2000;
  int eval_episodes = 10;
  std::uint64_t seed = 1;
  bool dump_frames = false;

  void validate() const {
    env.validate();
    if (omega < 1) throw ConfigError("omega must be >= 1");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
    if (aug.alpha < 0.0 || aug.alpha > 1.0) throw ConfigError("aug.alpha must lie in [0, 1]");
    if (aug.pad < 0) throw ConfigError("aug.pad must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (replay_capacity < 1) throw ConfigError("replay_capacity must be >= 1");
    if (total_env_steps < 0 || initial_collect < 0) throw ConfigError("step counts must be >= 0");
    if (eval_every < 0 || eval_episodes < 0) throw ConfigError("eval settings must be >= 0");
    if (model.filters < 1 || model.d_z < 1 || model.d_p < 1 || model.proj_hidden < 1 ||
        model.head_hidden < 1 || model.sac_hidden < 1)
      throw ConfigError("model sizes must be positive");
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, env, model, sac, aug, train_background,
                                                eval_backgrounds, ablation, omega, epsilon, bit_lr,
                                                detach_pseudo_action, augment_rl_path,
                                                total_env_steps, initial_collect, batch_size,
                                                replay_capacity, eval_every, eval_episodes, seed,
                                                dump_frames)

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed config " + path + ": " + e.what());
  }
  RunConfig cfg = j.get<RunConfig>();
  cfg.validate();
  return cfg;
}

}  // namespace bit
