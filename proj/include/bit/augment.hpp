#pragma once

// Image-space perturbations for the BiT online branch. All functions take
// float pixels in [0, 1], shaped (3k, H, W) or (B, 3k, H, W), never modify
// their input, and are bit-deterministic for a fixed seed.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "bit/config.hpp"
#include "bit/errors.hpp"
#include "bit/rng.hpp"

namespace bit::augment {

namespace detail {

// Lift a single observation to a batch of one; the bool says whether to squeeze back.
inline std::pair<torch::Tensor, bool> as_batch(const torch::Tensor& obs) {
  if (obs.dim() == 3) return {obs.unsqueeze(0), true};
  if (obs.dim() == 4) return {obs, false};
  throw ArgumentError("augment: expected (3k,H,W) or (B,3k,H,W) pixels");
}

inline void check_frames(const torch::Tensor& batch) {
  if (batch.size(1) % 3 != 0) throw ArgumentError("augment: channel count must be a multiple of 3");
}

}  // namespace detail

/// Procedural texture pool used as overlay distractors, (count, 3, H, W).
/// Smooth colour blobs over a tinted base plus a faint stripe layer.
inline torch::Tensor make_distractor_pool(int count, int height, int width,
                                          std::uint64_t seed = 0x0ddba11) {
  if (count < 1 || height < 1 || width < 1) throw ArgumentError("distractor pool: bad shape");
  Rng rng(seed);
  auto pool = torch::empty({count, 3, height, width}, torch::kFloat32);
  auto acc = pool.accessor<float, 4>();
  struct Blob {
    double cx, cy, sigma2, r, g, b;
  };
  for (int n = 0; n < count; ++n) {
    const double base[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
    std::vector<Blob> blobs(3 + rng.uniform_int(4));
    for (auto& bl : blobs) {
      const double s = rng.uniform(0.08, 0.35) * std::max(height, width);
      bl = {rng.uniform(0, width), rng.uniform(0, height), s * s, rng.uniform(), rng.uniform(),
            rng.uniform()};
    }
    const double stripe_k = rng.uniform(2.0, 8.0) * 2.0 * std::numbers::pi / width;
    const double stripe_angle = rng.uniform(0.0, std::numbers::pi);
    const double ca = std::cos(stripe_angle), sa = std::sin(stripe_angle);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        double px[3] = {base[0] * 0.5, base[1] * 0.5, base[2] * 0.5};
        for (const auto& bl : blobs) {
          const double d2 = (x - bl.cx) * (x - bl.cx) + (y - bl.cy) * (y - bl.cy);
          const double wgt = std::exp(-0.5 * d2 / bl.sigma2);
          px[0] += wgt * bl.r;
          px[1] += wgt * bl.g;
          px[2] += wgt * bl.b;
        }
        const double stripe = 0.1 * std::sin(stripe_k * (ca * x + sa * y));
        for (int c = 0; c < 3; ++c)
          acc[n][c][y][x] = static_cast<float>(std::clamp(px[c] + stripe, 0.0, 1.0));
      }
  }
  return pool;
}

/// Per-frame convex blend with a distractor drawn from `distractors` (N, 3, H, W).
inline torch::Tensor random_overlay(const torch::Tensor& obs, const torch::Tensor& distractors,
                                    double alpha, std::uint64_t seed) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("random_overlay: alpha must lie in [0, 1]");
  auto [batch, squeeze] = detail::as_batch(obs);
  detail::check_frames(batch);
  const auto B = batch.size(0), C = batch.size(1), H = batch.size(2), W = batch.size(3);
  if (distractors.dim() != 4 || distractors.size(1) != 3 || distractors.size(2) != H ||
      distractors.size(3) != W)
    throw ArgumentError("random_overlay: distractors must be (N, 3, H, W) matching the frame size");
  const auto frames = C / 3;
  Rng rng(seed);
  std::vector<std::int64_t> picks(B * frames);
  for (auto& p : picks) p = static_cast<std::int64_t>(rng.uniform_int(distractors.size(0)));
  auto idx = torch::from_blob(picks.data(), {B * frames}, torch::kInt64).clone();
  auto chosen = distractors.index_select(0, idx).to(batch.dtype()).reshape({B, C, H, W});
  auto out = batch * (1.0 - alpha) + chosen * alpha;
  out = out.clamp(0.0, 1.0);
  return squeeze ? out.squeeze(0) : out;
}

/// One 3x3 RGB->RGB kernel per observation (shared by its stacked frames), reflect
/// padding, then min-max renormalisation of every output frame to [0, 1].
inline torch::Tensor random_convolution(const torch::Tensor& obs, std::uint64_t seed) {
  namespace F = torch::nn::functional;
  auto [batch, squeeze] = detail::as_batch(obs);
  detail::check_frames(batch);
  const auto B = batch.size(0), C = batch.size(1), H = batch.size(2), W = batch.size(3);
  if (H < 2 || W < 2) throw ArgumentError("random_convolution: frames must be at least 2x2");
  const auto frames = C / 3;
  auto gen = make_torch_generator(seed);
  auto kernels = torch::randn({B, 3, 3, 3, 3}, gen, torch::dtype(batch.dtype()));
  std::vector<torch::Tensor> outs;
  outs.reserve(B);
  for (std::int64_t b = 0; b < B; ++b) {
    auto x = batch[b].reshape({frames, 3, H, W});
    x = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReflect));
    outs.push_back(F::conv2d(x, kernels[b]));
  }
  auto y = torch::stack(outs);  // (B, frames, 3, H, W)
  auto flat = y.reshape({B, frames, -1});
  auto lo = std::get<0>(flat.min(-1, true));
  auto hi = std::get<0>(flat.max(-1, true));
  auto range = hi - lo;
  auto flat_range = range > 1e-12;
  auto normed = torch::where(flat_range, (flat - lo) / torch::where(flat_range, range, torch::ones_like(range)),
                             flat.clamp(0.0, 1.0));
  auto out = normed.reshape({B, C, H, W});
  return squeeze ? out.squeeze(0) : out;
}

/// Crop origins in [0, 2*pad]^2, one per observation.
inline std::vector<std::pair<int, int>> shift_offsets(std::int64_t batch, int pad,
                                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<int, int>> offsets(batch);
  for (auto& [oy, ox] : offsets) {
    oy = static_cast<int>(rng.uniform_int(2 * pad + 1));
    ox = static_cast<int>(rng.uniform_int(2 * pad + 1));
  }
  return offsets;
}

/// Replicate-pad by `pad` and crop an H x W window; every stacked frame of an
/// observation moves by the same offset.
inline torch::Tensor random_shift(const torch::Tensor& obs, int pad, std::uint64_t seed) {
  namespace F = torch::nn::functional;
  auto [batch, squeeze] = detail::as_batch(obs);
  const auto B = batch.size(0), H = batch.size(2), W = batch.size(3);
  if (pad < 0 || 2 * pad >= std::min(H, W))
    throw ArgumentError("random_shift: pad must satisfy 0 <= pad < min(H, W) / 2");
  if (pad == 0) return obs.clone();
  auto padded = F::pad(batch, F::PadFuncOptions({pad, pad, pad, pad}).mode(torch::kReplicate));
  std::vector<torch::Tensor> outs;
  outs.reserve(B);
  const auto offsets = shift_offsets(B, pad, seed);
  for (std::int64_t b = 0; b < B; ++b) {
    const auto [oy, ox] = offsets[b];
    outs.push_back(padded[b].narrow(1, oy, H).narrow(2, ox, W));
  }
  auto out = torch::stack(outs);
  return squeeze ? out.squeeze(0) : out;
}

/// Holds the overlay pool so repeated calls do not regenerate textures.
class Augmenter {
 public:
  Augmenter(AugmentationSpec spec, int height, int width) : spec_(spec) {
    if (spec_.alpha < 0.0 || spec_.alpha > 1.0) throw ArgumentError("augment: alpha must lie in [0, 1]");
    if (spec_.pad < 0) throw ArgumentError("augment: pad must be >= 0");
    if (spec_.kind == AugKind::overlay) pool_ = make_distractor_pool(64, height, width);
  }

  const AugmentationSpec& spec() const { return spec_; }

  /// `call_seed` distinguishes successive calls; the spec seed salts it.
  torch::Tensor operator()(const torch::Tensor& obs, std::uint64_t call_seed) const {
    const auto seed = derive_seed(spec_.seed, call_seed);
    switch (spec_.kind) {
      case AugKind::none:
        return obs.clone();
      case AugKind::overlay:
        return random_overlay(obs, pool_, spec_.alpha, seed);
      case AugKind::random_conv:
        return random_convolution(obs, seed);
      case AugKind::random_shift:
        return random_shift(obs, spec_.pad, seed);
    }
    return obs.clone();
  }

 private:
  AugmentationSpec spec_;
  torch::Tensor pool_;
};

}  // namespace bit::augment
