#pragma once

// Online branch: encoder f, projection g, predictor q (trainable).
// Target branch: encoder and projection with the online architecture, updated
// only by exponential moving average and never reached by gradients.

#include <cstdint>
#include <string>

#include <torch/torch.h>

#include "bit/config.hpp"
#include "bit/errors.hpp"
#include "bit/nets.hpp"

namespace bit {

struct ExtractorShape {
  std::int64_t channels = 9;
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::int64_t filters = 32;
  std::int64_t d_z = 64;
  std::int64_t d_p = 64;
  std::int64_t hidden = 128;

  static ExtractorShape from(const RunConfig& cfg) {
    return {cfg.env.channels(), cfg.env.height, cfg.env.width, cfg.model.filters,
            cfg.model.d_z,      cfg.model.d_p,  cfg.model.proj_hidden};
  }
};

/// Blends `target` towards `online` in place. Blocks are paired by position and
/// must agree in name (after the first component) and shape.
inline void ema_blend(const NamedTensors& online, NamedTensors& target, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ArgumentError("ema_update: epsilon must lie in [0, 1]");
  if (online.size() != target.size())
    throw ConsistencyError("ema_update: online and target parameter counts differ");
  auto suffix = [](const std::string& n) { return n.substr(n.find('.') + 1); };
  for (std::size_t i = 0; i < online.size(); ++i)
    if (suffix(online[i].first) != suffix(target[i].first) || !online[i].second.sizes().equals(target[i].second.sizes()))
      throw ConsistencyError("ema_update: parameter mismatch between " + online[i].first + " and " +
                             target[i].first);
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < online.size(); ++i) {
    auto& t = target[i].second;
    if (epsilon == 1.0) {
      t.copy_(online[i].second);
    } else {
      // Accumulate in double and round once, so near-cancelling terms stay exact.
      auto blended = t.to(torch::kDouble, false, true).mul_(1.0 - epsilon);
      blended.add_(online[i].second.to(torch::kDouble), epsilon);
      t.copy_(blended);
    }
  }
}

class FeatureExtractor {
 public:
  explicit FeatureExtractor(const ExtractorShape& shape)
      : shape_(shape),
        encoder_(shape.channels, shape.height, shape.width, shape.filters, shape.d_z),
        projection_(shape.d_z, shape.hidden, shape.d_p),
        predictor_(shape.d_p, shape.hidden, shape.d_p),
        target_encoder_(shape.channels, shape.height, shape.width, shape.filters, shape.d_z),
        target_projection_(shape.d_z, shape.hidden, shape.d_p) {
    for (auto& p : target_parameters()) p.second.set_requires_grad(false);
    ema_update(1.0);
  }

  const ExtractorShape& shape() const { return shape_; }

  /// z~ = f(o). Feeds both the policy learner and the online branch.
  torch::Tensor encode(const torch::Tensor& obs) {
    check_obs(obs);
    return encoder_(obs);
  }

  /// z' = q(g(f(o'))). Gradients flow to the online parameters.
  torch::Tensor online_project(const torch::Tensor& obs_aug) {
    check_obs(obs_aug);
    return predictor_(projection_(encoder_(obs_aug)));
  }

  /// z = g_target(f_target(o)), detached from every graph.
  torch::Tensor target_project(const torch::Tensor& obs) {
    check_obs(obs);
    torch::NoGradGuard no_grad;
    return target_projection_(target_encoder_(obs)).detach();
  }

  /// target <- (1 - epsilon) * target + epsilon * online, elementwise.
  void ema_update(double epsilon) {
    auto target = target_parameters();
    ema_blend(online_congruent_parameters(), target, epsilon);
  }

  Encoder& encoder() { return encoder_; }
  Mlp& projection() { return projection_; }
  Mlp& predictor() { return predictor_; }
  Encoder& target_encoder() { return target_encoder_; }
  Mlp& target_projection() { return target_projection_; }

  /// f, g, q: everything L_BiT trains on the feature-extractor side.
  NamedTensors online_parameters() const {
    NamedTensors out;
    append_named(out, "encoder", *encoder_);
    append_named(out, "projection", *projection_);
    append_named(out, "predictor", *predictor_);
    return out;
  }

  NamedTensors target_parameters() const {
    NamedTensors out;
    append_named(out, "target_encoder", *target_encoder_);
    append_named(out, "target_projection", *target_projection_);
    return out;
  }

  /// Online parameters that have a target counterpart (f and g).
  NamedTensors online_congruent_parameters() const {
    NamedTensors out;
    append_named(out, "encoder", *encoder_);
    append_named(out, "projection", *projection_);
    return out;
  }

  std::uint64_t target_hash() const { return hash_tensors(target_parameters()); }
  std::uint64_t online_hash() const { return hash_tensors(online_parameters()); }

  void to(torch::Dtype dtype) {
    encoder_->to(dtype);
    projection_->to(dtype);
    predictor_->to(dtype);
    target_encoder_->to(dtype);
    target_projection_->to(dtype);
  }

 private:
  void check_obs(const torch::Tensor& obs) const {
    if (obs.dim() != 4 || obs.size(1) != shape_.channels || obs.size(2) != shape_.height ||
        obs.size(3) != shape_.width)
      throw ArgumentError("feature extractor: expected observations of shape (B, " +
                          std::to_string(shape_.channels) + ", " + std::to_string(shape_.height) +
                          ", " + std::to_string(shape_.width) + ")");
  }

  ExtractorShape shape_;
  Encoder encoder_;
  Mlp projection_;
  Mlp predictor_;
  Encoder target_encoder_;
  Mlp target_projection_;
};

}  // namespace bit
