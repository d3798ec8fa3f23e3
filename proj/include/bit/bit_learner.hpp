#pragma once

// Bidirectional transition learner. From the online view z' of the augmented
// observation and the target views z_t, z_{t+1}:
//
//   a_hat       = h(z', z_{t+1})          pseudo action, tanh-squashed
//   z_hat_{t+1} = F(z', a_hat)            forward transition
//   z_hat_t     = B(a_hat, z_{t+1})       backward transition
//
//   L = mse(a_hat, a_t) + mse(z_hat_{t+1}, z_{t+1}) + mse(z_hat_t, z_t)
//
// All prediction happens in latent space; rewards are never read.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "bit/augment.hpp"
#include "bit/config.hpp"
#include "bit/env_toy.hpp"
#include "bit/errors.hpp"
#include "bit/feature_extractor.hpp"
#include "bit/nets.hpp"
#include "bit/replay.hpp"

namespace bit {

struct BiTHeadsImpl : torch::nn::Module {
  BiTHeadsImpl(std::int64_t d_p, std::int64_t action_dim, std::int64_t hidden)
      : d_p(d_p),
        action_dim(action_dim),
        action_head(register_module("action_head", Mlp(2 * d_p, hidden, action_dim))),
        forward_model(register_module("forward_model", Mlp(d_p + action_dim, hidden, d_p))),
        backward_model(register_module("backward_model", Mlp(action_dim + d_p, hidden, d_p))) {}

  torch::Tensor predict_action(const torch::Tensor& z_prime, const torch::Tensor& z_next) {
    check(z_prime, d_p, "predict_action: z'");
    check(z_next, d_p, "predict_action: z_{t+1}");
    return torch::tanh(action_head(torch::cat({z_prime, z_next}, 1)));
  }

  torch::Tensor forward_predict(const torch::Tensor& z_prime, const torch::Tensor& a_hat) {
    check(z_prime, d_p, "forward_predict: z'");
    check(a_hat, action_dim, "forward_predict: action");
    return forward_model(torch::cat({z_prime, a_hat}, 1));
  }

  torch::Tensor backward_predict(const torch::Tensor& a_hat, const torch::Tensor& z_next) {
    check(a_hat, action_dim, "backward_predict: action");
    check(z_next, d_p, "backward_predict: z_{t+1}");
    return backward_model(torch::cat({a_hat, z_next}, 1));
  }

  std::int64_t d_p;
  std::int64_t action_dim;
  Mlp action_head;
  Mlp forward_model;
  Mlp backward_model;

 private:
  static void check(const torch::Tensor& t, std::int64_t dim, const char* what) {
    if (t.dim() != 2 || t.size(1) != dim)
      throw ArgumentError(std::string(what) + " must have shape (B, " + std::to_string(dim) + ")");
  }
};
TORCH_MODULE(BiTHeads);

/// Which terms of the objective are active; realises the ablation variants.
struct LossMask {
  bool action = true;
  bool fwd = true;
  bool bwd = true;
  // Feed the true action to F and B instead of the pseudo action.
  bool use_true_action = false;

  static LossMask for_variant(Ablation v) {
    switch (v) {
      case Ablation::full: return {};
      case Ablation::no_fwd: return {true, false, true, false};
      case Ablation::no_bwd: return {true, true, false, false};
      case Ablation::no_action: return {false, true, true, true};
      case Ablation::only_action: return {true, false, false, false};
      case Ablation::baseline: return {false, false, false, false};
    }
    return {};
  }
};

struct BiTTerms {
  torch::Tensor action;
  torch::Tensor fwd;
  torch::Tensor bwd;
  torch::Tensor total;
};

/// Masked-out terms are exact zeros, so total always equals the sum of the three.
inline BiTTerms bit_objective(const torch::Tensor& a_hat, const torch::Tensor& a_true,
                              const torch::Tensor& z_next_hat, const torch::Tensor& z_next,
                              const torch::Tensor& z_t_hat, const torch::Tensor& z_t,
                              const LossMask& mask) {
  auto mse = [](const torch::Tensor& pred, const torch::Tensor& target) {
    return (pred - target).pow(2).mean();
  };
  auto zero = torch::zeros({}, z_next.options());
  BiTTerms t;
  t.action = mask.action ? mse(a_hat, a_true) : zero;
  t.fwd = mask.fwd ? mse(z_next_hat, z_next) : zero;
  t.bwd = mask.bwd ? mse(z_t_hat, z_t) : zero;
  t.total = t.action + t.fwd + t.bwd;
  return t;
}

struct BiTLossReport {
  double l_action = 0.0;
  double l_fwd = 0.0;
  double l_bwd = 0.0;
  double l_total = 0.0;
  double z_batch_variance = 0.0;
};

struct BiTForward {
  BiTTerms terms;
  torch::Tensor z_prime;
  torch::Tensor z_t;
  torch::Tensor z_next;
  torch::Tensor a_hat;

  BiTLossReport report() const {
    torch::NoGradGuard no_grad;
    return {terms.action.item<double>(), terms.fwd.item<double>(), terms.bwd.item<double>(),
            terms.total.item<double>(),
            z_prime.var(0, /*unbiased=*/false).mean().item<double>()};
  }
};

struct BiTOptions {
  double lr = 1e-3;
  LossMask mask;
  bool detach_pseudo_action = false;
};

class BiTLearner {
 public:
  BiTLearner(FeatureExtractor& extractor, BiTHeads heads, augment::Augmenter augmenter,
             BiTOptions options)
      : extractor_(&extractor),
        heads_(std::move(heads)),
        augmenter_(std::move(augmenter)),
        options_(options),
        optimizer_(trainable_parameters(), torch::optim::AdamOptions(options.lr)) {}

  /// Losses with the graph attached, given an already augmented o'.
  BiTForward compute(const torch::Tensor& obs_aug, const torch::Tensor& obs,
                     const torch::Tensor& next_obs, const torch::Tensor& action) {
    if (obs.size(0) == 0) throw ArgumentError("bit_loss: empty batch");
    BiTForward f;
    f.z_prime = extractor_->online_project(obs_aug);
    f.z_t = extractor_->target_project(obs);
    f.z_next = extractor_->target_project(next_obs);
    const auto& mask = options_.mask;
    torch::Tensor fb_action;
    if (mask.use_true_action) {
      f.a_hat = action;
      fb_action = action;
    } else {
      f.a_hat = heads_->predict_action(f.z_prime, f.z_next);
      fb_action = options_.detach_pseudo_action ? f.a_hat.detach() : f.a_hat;
    }
    auto z_next_hat = mask.fwd ? heads_->forward_predict(f.z_prime, fb_action) : f.z_next;
    auto z_t_hat = mask.bwd ? heads_->backward_predict(fb_action, f.z_next) : f.z_t;
    f.terms = bit_objective(f.a_hat, action, z_next_hat, f.z_next, z_t_hat, f.z_t, mask);
    return f;
  }

  BiTForward compute(const TransitionBatch& batch, std::uint64_t aug_seed) {
    if (batch.size() == 0) throw ArgumentError("bit_loss: empty batch");
    return compute(augmenter_(batch.obs, aug_seed), batch.obs, batch.next_obs, batch.action);
  }

  /// Loss report without touching any parameter.
  BiTLossReport bit_loss(const TransitionBatch& batch, std::uint64_t aug_seed) {
    torch::NoGradGuard no_grad;
    return compute(batch, aug_seed).report();
  }

  /// One joint step on f, g, q, h, F, B. Returns the pre-step losses.
  BiTLossReport bit_update(const TransitionBatch& batch) {
    const auto aug_seed = update_count_++;
    optimizer_.zero_grad();
    auto f = compute(batch, aug_seed);
    auto report = f.report();
    if (!std::isfinite(report.l_total))
      throw DivergenceError("bit_update: non-finite loss (l_action=" + std::to_string(report.l_action) +
                            ", l_fwd=" + std::to_string(report.l_fwd) +
                            ", l_bwd=" + std::to_string(report.l_bwd) + ")");
    if (f.terms.total.requires_grad()) {
      f.terms.total.backward();
      optimizer_.step();
    }
    return report;
  }

  std::vector<torch::Tensor> trainable_parameters() const {
    std::vector<torch::Tensor> params;
    for (auto& [name, p] : extractor_->online_parameters()) params.push_back(p);
    for (auto& p : heads_->parameters()) params.push_back(p);
    return params;
  }

  BiTHeads& heads() { return heads_; }
  const BiTOptions& options() const { return options_; }
  const augment::Augmenter& augmenter() const { return augmenter_; }
  torch::optim::Adam& optimizer() { return optimizer_; }
  std::uint64_t update_count() const { return update_count_; }

 private:
  FeatureExtractor* extractor_;
  BiTHeads heads_;
  augment::Augmenter augmenter_;
  BiTOptions options_;
  torch::optim::Adam optimizer_;
  std::uint64_t update_count_ = 0;
};

}  // namespace bit
