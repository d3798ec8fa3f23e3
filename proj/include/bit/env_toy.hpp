#pragma once

// Point-mass reaching task rendered to small RGB frames. The background tier
// changes only pixels; the physics and the sprites are identical across tiers.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "bit/config.hpp"
#include "bit/errors.hpp"
#include "bit/image_io.hpp"
#include "bit/rng.hpp"

namespace bit {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Vec2&) const = default;
  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
  double norm() const { return std::hypot(x, y); }
};

using Action = Vec2;
inline constexpr int kActionDim = 2;

struct EnvState {
  Vec2 position;
  Vec2 velocity;
  Vec2 goal;
  int step_index = 0;
  Rng rng;

  bool operator==(const EnvState&) const = default;
};

/// Stacked frames, oldest first, stored as bytes. (3k, H, W).
struct Observation {
  torch::Tensor frames;

  /// Float view in [0, 1].
  torch::Tensor pixels() const { return frames.to(torch::kFloat32).div_(255.0f); }
  bool operator==(const Observation& o) const { return frames.equal(o.frames); }
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
};

namespace sprites {
inline constexpr double kAgentRadiusPx = 4.0;
inline constexpr int kGoalSidePx = 8;
inline constexpr std::array<std::uint8_t, 3> kAgentColor{235, 60, 50};
inline constexpr std::array<std::uint8_t, 3> kGoalColor{60, 220, 90};
}  // namespace sprites

/// Arena coordinate in [-1, 1] to pixel-centre coordinate in [0, extent - 1].
inline double arena_to_pixel(double v, int extent) { return (v + 1.0) * 0.5 * (extent - 1); }

class PointMassEnv {
 public:
  explicit PointMassEnv(EnvConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const EnvConfig& config() const { return cfg_; }

  Observation reset(std::uint64_t seed, BackgroundMode background) {
    state_ = EnvState{};
    state_.rng = Rng(seed);
    background_ = background;
    episode_seed_ = seed;
    do {
      state_.position = {state_.rng.uniform(-1.0, 1.0), state_.rng.uniform(-1.0, 1.0)};
      state_.goal = {state_.rng.uniform(-1.0, 1.0), state_.rng.uniform(-1.0, 1.0)};
    } while ((state_.position - state_.goal).norm() < 0.5);
    init_background();
    done_ = false;
    initialized_ = true;
    ++episode_counter_;
    stack_.clear();
    const auto first = render();
    for (int i = 0; i < cfg_.frame_stack; ++i) stack_.push_back(first);
    maybe_dump(first);
    return observation();
  }

  StepResult step(Action action) {
    if (!initialized_) throw UsageError("step() called before reset()");
    if (done_) throw UsageError("step() called after the episode finished; call reset()");
    if (!std::isfinite(action.x) || !std::isfinite(action.y))
      throw ArgumentError("action components must be finite");
    const Vec2 a{std::clamp(action.x, -1.0, 1.0), std::clamp(action.y, -1.0, 1.0)};
    const double vmax = cfg_.v_max;
    auto& s = state_;
    s.velocity = {std::clamp(s.velocity.x + a.x * cfg_.dt * cfg_.force_scale, -vmax, vmax),
                  std::clamp(s.velocity.y + a.y * cfg_.dt * cfg_.force_scale, -vmax, vmax)};
    s.position = {std::clamp(s.position.x + s.velocity.x * cfg_.dt, -1.0, 1.0),
                  std::clamp(s.position.y + s.velocity.y * cfg_.dt, -1.0, 1.0)};
    ++s.step_index;
    done_ = s.step_index >= cfg_.horizon;
    const auto frame = render();
    stack_.pop_front();
    stack_.push_back(frame);
    maybe_dump(frame);
    return {observation(), -(s.position - s.goal).norm(), done_};
  }

  EnvState ground_truth_state() const {
    if (!initialized_) throw UsageError("environment not reset");
    return state_;
  }

  bool done() const { return done_; }

  /// Write every rendered frame as frame_{episode}_{step}.png into `dir`.
  void enable_frame_dump(std::filesystem::path dir) {
    std::filesystem::create_directories(dir);
    dump_dir_ = std::move(dir);
  }

  /// Pixel mask (H, W) of the agent sprite for the current state.
  std::vector<bool> agent_mask() const {
    std::vector<bool> mask(static_cast<std::size_t>(cfg_.height) * cfg_.width, false);
    for_each_agent_pixel([&](int row, int col) { mask[row * cfg_.width + col] = true; });
    return mask;
  }

 private:
  using Frame = std::vector<std::uint8_t>;  // planar (3, H, W)

  struct EasyWave {
    double kx, ky, phase, speed;
  };

  void init_background() {
    Rng bg_rng(derive_seed(background_.seed, episode_seed_));
    const double dim = std::max(cfg_.height, cfg_.width);
    switch (background_.tier) {
      case BackgroundTier::clean:
        break;
      case BackgroundTier::easy:
        for (auto& w : easy_waves_) {
          // one to two cycles across the frame
          const double cycles = bg_rng.uniform(0.5, 1.5);
          const double angle = bg_rng.uniform(0.0, 2.0 * std::numbers::pi);
          w = {cycles * std::cos(angle) / dim, cycles * std::sin(angle) / dim,
               bg_rng.uniform(0.0, 2.0 * std::numbers::pi), bg_rng.uniform(0.15, 0.35)};
        }
        break;
      case BackgroundTier::hard: {
        tex_h_ = 2 * cfg_.height;
        tex_w_ = 2 * cfg_.width;
        constexpr int kCell = 4;
        const int cells_y = (tex_h_ + kCell - 1) / kCell;
        const int cells_x = (tex_w_ + kCell - 1) / kCell;
        std::vector<std::array<std::uint8_t, 3>> cells(static_cast<std::size_t>(cells_y) * cells_x);
        for (auto& c : cells)
          for (auto& v : c) v = bg_rng.uniform() < 0.5 ? static_cast<std::uint8_t>(bg_rng.uniform_int(64))
                                                        : static_cast<std::uint8_t>(192 + bg_rng.uniform_int(64));
        texture_.assign(static_cast<std::size_t>(3) * tex_h_ * tex_w_, 0);
        for (int y = 0; y < tex_h_; ++y)
          for (int x = 0; x < tex_w_; ++x)
            for (int c = 0; c < 3; ++c)
              texture_[(static_cast<std::size_t>(c) * tex_h_ + y) * tex_w_ + x] =
                  cells[(y / kCell) * cells_x + x / kCell][c];
        const double angle = bg_rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double speed = bg_rng.uniform(0.5, 1.5);  // pixels per step
        drift_ = {speed * std::cos(angle), speed * std::sin(angle)};
        break;
      }
    }
  }

  void paint_background(Frame& f) const {
    const int h = cfg_.height, w = cfg_.width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const int t = state_.step_index;
    switch (background_.tier) {
      case BackgroundTier::clean: {
        constexpr std::array<std::uint8_t, 3> kClean{46, 56, 72};
        for (int c = 0; c < 3; ++c) std::fill_n(f.begin() + c * plane, plane, kClean[c]);
        break;
      }
      case BackgroundTier::easy: {
        constexpr std::array<double, 3> kBase{0.35, 0.40, 0.45};
        constexpr double kAmplitude = 0.12;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
              const auto& wv = easy_waves_[c];
              const double v = kBase[c] + kAmplitude * std::sin(2.0 * std::numbers::pi *
                                                                    (wv.kx * x + wv.ky * y) +
                                                                wv.phase + wv.speed * t);
              f[c * plane + y * w + x] = static_cast<std::uint8_t>(std::lround(255.0 * v));
            }
        break;
      }
      case BackgroundTier::hard: {
        const int ox = static_cast<int>(std::floor(drift_.x * t));
        const int oy = static_cast<int>(std::floor(drift_.y * t));
        auto wrap = [](int v, int n) { return ((v % n) + n) % n; };
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const int ty = wrap(y + oy, tex_h_), tx = wrap(x + ox, tex_w_);
            for (int c = 0; c < 3; ++c)
              f[c * plane + y * w + x] =
                  texture_[(static_cast<std::size_t>(c) * tex_h_ + ty) * tex_w_ + tx];
          }
        break;
      }
    }
  }

  template <class Fn>
  void for_each_goal_pixel(Fn&& fn) const {
    const double cx = arena_to_pixel(state_.goal.x, cfg_.width);
    const double cy = arena_to_pixel(state_.goal.y, cfg_.height);
    const double half = sprites::kGoalSidePx / 2.0;
    for (int row = 0; row < cfg_.height; ++row)
      for (int col = 0; col < cfg_.width; ++col)
        if (std::abs(col - cx) < half && std::abs(row - cy) < half) fn(row, col);
  }

  template <class Fn>
  void for_each_agent_pixel(Fn&& fn) const {
    const double cx = arena_to_pixel(state_.position.x, cfg_.width);
    const double cy = arena_to_pixel(state_.position.y, cfg_.height);
    const double r2 = sprites::kAgentRadiusPx * sprites::kAgentRadiusPx;
    for (int row = 0; row < cfg_.height; ++row)
      for (int col = 0; col < cfg_.width; ++col)
        if ((col - cx) * (col - cx) + (row - cy) * (row - cy) <= r2) fn(row, col);
  }

  Frame render() const {
    const std::size_t plane = static_cast<std::size_t>(cfg_.height) * cfg_.width;
    Frame f(3 * plane);
    paint_background(f);
    auto paint = [&](const std::array<std::uint8_t, 3>& color) {
      return [&f, &color, plane, w = cfg_.width](int row, int col) {
        for (int c = 0; c < 3; ++c) f[c * plane + row * w + col] = color[c];
      };
    };
    for_each_goal_pixel(paint(sprites::kGoalColor));
    for_each_agent_pixel(paint(sprites::kAgentColor));
    return f;
  }

  Observation observation() const {
    const std::size_t frame_bytes = static_cast<std::size_t>(3) * cfg_.height * cfg_.width;
    auto out = torch::empty({cfg_.channels(), cfg_.height, cfg_.width}, torch::kUInt8);
    auto* dst = out.data_ptr<std::uint8_t>();
    for (const auto& frame : stack_) {
      std::copy(frame.begin(), frame.end(), dst);
      dst += frame_bytes;
    }
    return {out};
  }

  void maybe_dump(const Frame& frame) const {
    if (!dump_dir_) return;
    const auto name = "frame_" + std::to_string(episode_counter_ - 1) + "_" +
                      std::to_string(state_.step_index) + ".png";
    write_png_rgb_planar(*dump_dir_ / name, cfg_.width, cfg_.height, frame);
  }

  EnvConfig cfg_;
  EnvState state_;
  BackgroundMode background_;
  std::uint64_t episode_seed_ = 0;
  bool initialized_ = false;
  bool done_ = false;
  std::deque<Frame> stack_;
  std::int64_t episode_counter_ = 0;
  std::optional<std::filesystem::path> dump_dir_;

  std::array<EasyWave, 3> easy_waves_{};
  std::vector<std::uint8_t> texture_;
  int tex_h_ = 0;
  int tex_w_ = 0;
  Vec2 drift_;
};

}  // namespace bit
