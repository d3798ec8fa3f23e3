#pragma once

// Soft actor-critic on top of the shared encoder. The critic loss trains the
// critics and the encoder; actor and temperature losses see detached features.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "bit/augment.hpp"
#include "bit/config.hpp"
#include "bit/env_toy.hpp"
#include "bit/errors.hpp"
#include "bit/nets.hpp"
#include "bit/replay.hpp"
#include "bit/rng.hpp"

namespace bit {

struct PolicySample {
  torch::Tensor action;    // tanh-squashed, (B, A)
  torch::Tensor log_prob;  // (B, 1)
  torch::Tensor mean;      // squashed mean, (B, A)
};

struct ActorImpl : torch::nn::Module {
  ActorImpl(std::int64_t d_z, std::int64_t hidden, std::int64_t action_dim, double log_std_min,
            double log_std_max)
      : trunk(register_module("trunk", DeepMlp(d_z, hidden, 2 * action_dim))),
        action_dim(action_dim),
        log_std_min(log_std_min),
        log_std_max(log_std_max) {}

  /// Reparameterised sample; `noise` is standard normal of shape (B, A).
  PolicySample forward(const torch::Tensor& z, const torch::Tensor& noise) {
    auto out = trunk(z);
    auto mu = out.narrow(1, 0, action_dim);
    auto log_std = torch::tanh(out.narrow(1, action_dim, action_dim));
    log_std = log_std_min + 0.5 * (log_std_max - log_std_min) * (log_std + 1.0);
    auto pre = mu + noise * log_std.exp();
    auto gaussian_lp = (-0.5 * noise.pow(2) - log_std - 0.5 * std::log(2.0 * std::numbers::pi)).sum(1, true);
    // log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u))
    auto squash = (2.0 * (std::numbers::ln2 - pre - torch::softplus(-2.0 * pre))).sum(1, true);
    return {torch::tanh(pre), gaussian_lp - squash, torch::tanh(mu)};
  }

  DeepMlp trunk;
  std::int64_t action_dim;
  double log_std_min;
  double log_std_max;
};
TORCH_MODULE(Actor);

struct TwinCriticImpl : torch::nn::Module {
  TwinCriticImpl(std::int64_t d_z, std::int64_t hidden, std::int64_t action_dim)
      : q1(register_module("q1", DeepMlp(d_z + action_dim, hidden, 1))),
        q2(register_module("q2", DeepMlp(d_z + action_dim, hidden, 1))) {}

  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& z, const torch::Tensor& a) {
    auto x = torch::cat({z, a}, 1);
    return {q1(x), q2(x)};
  }

  DeepMlp q1;
  DeepMlp q2;
};
TORCH_MODULE(TwinCritic);

/// y = r + gamma * (1 - done) * soft_value_next.
inline torch::Tensor critic_target(const torch::Tensor& reward, const torch::Tensor& done,
                                   const torch::Tensor& soft_value_next, double gamma) {
  return reward + gamma * (1.0 - done) * soft_value_next;
}

struct RlReport {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;
};

class SacLearner {
 public:
  SacLearner(Encoder encoder, const ModelConfig& model, const SacConfig& cfg, std::uint64_t seed)
      : encoder_(std::move(encoder)),
        cfg_(cfg),
        actor_(model.d_z, model.sac_hidden, kActionDim, cfg.log_std_min, cfg.log_std_max),
        critic_(model.d_z, model.sac_hidden, kActionDim),
        critic_target_(model.d_z, model.sac_hidden, kActionDim),
        log_alpha_(torch::full({1}, std::log(cfg.init_alpha)).set_requires_grad(true)),
        target_entropy_(-static_cast<double>(kActionDim)),
        gen_(make_torch_generator(seed)),
        critic_opt_(critic_and_encoder_parameters(), torch::optim::AdamOptions(cfg.critic_lr)),
        actor_opt_(actor_->parameters(), torch::optim::AdamOptions(cfg.actor_lr)),
        alpha_opt_(std::vector<torch::Tensor>{log_alpha_}, torch::optim::AdamOptions(cfg.alpha_lr)) {
    if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0)) throw ConfigError("sac: gamma must lie in [0, 1)");
    copy_critic_to_target();
    for (auto& p : critic_target_->parameters()) p.set_requires_grad(false);
  }

  /// `z_tilde` is (d_z) or (1, d_z). Components of the result are in [-1, 1].
  Action select_action(const torch::Tensor& z_tilde, bool deterministic) {
    torch::NoGradGuard no_grad;
    auto z = z_tilde.dim() == 1 ? z_tilde.unsqueeze(0) : z_tilde;
    if (z.dim() != 2 || z.size(0) != 1 || z.size(1) != actor_->trunk->fc1->options.in_features())
      throw ArgumentError("select_action: z~ must have dimension d_z");
    auto noise = deterministic ? torch::zeros({1, kActionDim}, z.options())
                               : torch::randn({1, kActionDim}, gen_, z.options());
    auto sample = actor_(z, noise);
    auto a = (deterministic ? sample.mean : sample.action).to(torch::kDouble);
    return {a[0][0].item<double>(), a[0][1].item<double>()};
  }

  double alpha() const { return log_alpha_.exp().item<double>(); }

  /// MSE of both critics against a fixed target y; gradients reach critics and encoder.
  torch::Tensor critic_loss(const torch::Tensor& obs, const torch::Tensor& action, const torch::Tensor& y) {
    auto z = encoder_(obs);
    auto [q1, q2] = critic_(z, action);
    return (q1 - y).pow(2).mean() + (q2 - y).pow(2).mean();
  }

  /// Bootstrapped target from next observations; no graph.
  torch::Tensor compute_target(const TransitionBatch& batch) {
    torch::NoGradGuard no_grad;
    auto z_next = encoder_(batch.next_obs);
    auto noise = torch::randn({batch.size(), kActionDim}, gen_, z_next.options());
    auto next = actor_(z_next, noise);
    auto [tq1, tq2] = critic_target_(z_next, next.action);
    auto soft_value = torch::min(tq1, tq2) - log_alpha_.exp().to(z_next.scalar_type()) * next.log_prob;
    return critic_target(batch.reward, batch.done, soft_value, cfg_.gamma);
  }

  /// Actor loss on detached features. Returns (loss, log_prob).
  std::pair<torch::Tensor, torch::Tensor> actor_loss(const torch::Tensor& z_detached) {
    auto noise = torch::randn({z_detached.size(0), kActionDim}, gen_, z_detached.options());
    auto pi = actor_(z_detached, noise);
    auto [q1, q2] = critic_(z_detached, pi.action);
    auto alpha = log_alpha_.exp().detach().to(z_detached.scalar_type());
    return {(alpha * pi.log_prob - torch::min(q1, q2)).mean(), pi.log_prob};
  }

  /// `rl_obs` lets the caller substitute augmented observations for the raw ones.
  RlReport rl_update(const TransitionBatch& batch, const torch::Tensor& rl_obs = {}) {
    const auto& obs = rl_obs.defined() ? rl_obs : batch.obs;
    auto y = compute_target(batch);

    critic_opt_.zero_grad();
    auto c_loss = critic_loss(obs, batch.action, y);
    check_finite(c_loss, "critic");
    c_loss.backward();
    critic_opt_.step();

    torch::Tensor z_detached;
    {
      torch::NoGradGuard no_grad;
      z_detached = encoder_(obs);
    }
    actor_opt_.zero_grad();
    auto [a_loss, log_prob] = actor_loss(z_detached);
    check_finite(a_loss, "actor");
    // Only the actor is stepped here, so skip accumulating into the critic.
    a_loss.backward({}, false, false, actor_->parameters());
    actor_opt_.step();

    alpha_opt_.zero_grad();
    auto al_loss = -(log_alpha_ * (log_prob.detach() + target_entropy_).to(log_alpha_.scalar_type())).mean();
    check_finite(al_loss, "alpha");
    al_loss.backward();
    alpha_opt_.step();

    soft_update_critic_target();
    return {c_loss.item<double>(), a_loss.item<double>(), al_loss.item<double>(), alpha(),
            -log_prob.mean().item<double>()};
  }

  Actor& actor() { return actor_; }
  TwinCritic& critic() { return critic_; }
  TwinCritic& critic_target_net() { return critic_target_; }
  torch::Tensor& log_alpha() { return log_alpha_; }
  Encoder& encoder() { return encoder_; }
  at::Generator& generator() { return gen_; }
  const SacConfig& config() const { return cfg_; }

  NamedTensors named_tensors() const {
    NamedTensors out;
    append_named(out, "actor", *actor_);
    append_named(out, "critic", *critic_);
    append_named(out, "critic_target", *critic_target_);
    out.emplace_back("log_alpha", log_alpha_);
    return out;
  }

 private:
  std::vector<torch::Tensor> critic_and_encoder_parameters() const {
    auto params = critic_->parameters();
    for (auto& p : encoder_->parameters()) params.push_back(p);
    return params;
  }

  void copy_critic_to_target() {
    torch::NoGradGuard no_grad;
    auto src = critic_->parameters();
    auto dst = critic_target_->parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i].copy_(src[i]);
  }

  void soft_update_critic_target() {
    torch::NoGradGuard no_grad;
    auto src = critic_->parameters();
    auto dst = critic_target_->parameters();
    for (std::size_t i = 0; i < src.size(); ++i)
      dst[i].mul_(1.0 - cfg_.critic_tau).add_(src[i], cfg_.critic_tau);
  }

  static void check_finite(const torch::Tensor& loss, const char* what) {
    if (!std::isfinite(loss.item<double>()))
      throw DivergenceError(std::string("rl_update: non-finite ") + what + " loss");
  }

  Encoder encoder_;
  SacConfig cfg_;
  Actor actor_;
  TwinCritic critic_;
  TwinCritic critic_target_;
  torch::Tensor log_alpha_;
  double target_entropy_;
  at::Generator gen_;
  torch::optim::Adam critic_opt_;
  torch::optim::Adam actor_opt_;
  torch::optim::Adam alpha_opt_;
};

}  // namespace bit
