#pragma once

// Small shapes shared by the unit tests so every network runs in milliseconds.

#include <filesystem>
#include <random>
#include <string>

#include <torch/torch.h>

#include "bit/bit.hpp"

namespace bit::testing {

inline RunConfig tiny_config(std::uint64_t seed = 1) {
  RunConfig cfg;
  cfg.env.height = 16;
  cfg.env.width = 16;
  cfg.env.frame_stack = 2;
  cfg.env.horizon = 20;
  cfg.model = {4, 8, 8, 16, 16, 16};
  cfg.batch_size = 8;
  cfg.initial_collect = 20;
  cfg.total_env_steps = 40;
  cfg.replay_capacity = 1000;
  cfg.eval_every = 20;
  cfg.eval_episodes = 1;
  cfg.seed = seed;
  return cfg;
}

/// Uniform random pixels in [0, 1], (B, C, H, W).
inline torch::Tensor random_pixels(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w,
                                   std::uint64_t seed) {
  auto gen = make_torch_generator(seed);
  return torch::rand({b, c, h, w}, gen);
}

/// A real transition batch collected with random actions from the toy env.
inline TransitionBatch env_batch(const RunConfig& cfg, std::int64_t n, std::uint64_t seed) {
  PointMassEnv env(cfg.env);
  ReplayBuffer rb(n, {cfg.env.channels(), cfg.env.height, cfg.env.width}, seed);
  Rng rng(seed);
  auto obs = env.reset(seed, cfg.train_background);
  for (std::int64_t i = 0; i < n; ++i) {
    const Action a{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    auto r = env.step(a);
    rb.push({obs, a, r.reward, r.observation, r.done});
    obs = r.done ? env.reset(seed + i + 1, cfg.train_background) : r.observation;
  }
  return rb.contents();
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("bit_test_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace bit::testing
