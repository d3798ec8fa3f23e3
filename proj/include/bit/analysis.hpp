#pragma once

#include <algorithm>
#include <array>
#include <functional>
#include <limits>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "bit/agent.hpp"
#include "bit/env_toy.hpp"
#include "bit/errors.hpp"
#include "bit/image_io.hpp"
#include "bit/trainer.hpp"

namespace bit {

// ---------------------------------------------------------------------------
// Saliency

/// (H, W) heat map in [0, 1]; all zeros when the gradient is flat.
struct SaliencyMap {
  torch::Tensor heatmap;
};

/// |d ||f(o)||^2 / d o| summed over channels and stack, min-max normalised.
inline SaliencyMap saliency_map(Encoder& encoder, const torch::Tensor& pixels) {
  if (pixels.dim() != 3) throw ArgumentError("saliency_map: expected one (3k, H, W) observation");
  auto x = pixels.detach().to(torch::kFloat32).unsqueeze(0).set_requires_grad(true);
  auto z = encoder(x);
  auto grads = torch::autograd::grad({z.pow(2).sum()}, {x});
  auto g = grads[0].abs().sum({0, 1}).to(torch::kDouble);
  const double lo = g.min().item<double>();
  const double hi = g.max().item<double>();
  if (!(hi - lo > 0.0)) return {torch::zeros_like(g).to(torch::kFloat32)};
  return {((g - lo) / (hi - lo)).to(torch::kFloat32)};
}

inline SaliencyMap saliency_map(Agent& agent, const Observation& obs) {
  return saliency_map(agent.extractor().encoder(), obs.pixels());
}

/// Writes `<stem>.png` (grayscale) and `<stem>.f32` (raw little-endian floats, row-major).
inline void write_saliency(const std::filesystem::path& dir, const std::string& stem, const SaliencyMap& map) {
  std::filesystem::create_directories(dir);
  auto h = map.heatmap.contiguous();
  const int rows = static_cast<int>(h.size(0)), cols = static_cast<int>(h.size(1));
  std::vector<std::uint8_t> gray(static_cast<std::size_t>(rows) * cols);
  const float* p = h.data_ptr<float>();
  for (std::size_t i = 0; i < gray.size(); ++i)
    gray[i] = static_cast<std::uint8_t>(std::lround(255.0f * std::clamp(p[i], 0.0f, 1.0f)));
  write_png_gray(dir / (stem + ".png"), cols, rows, gray);
  std::ofstream raw(dir / (stem + ".f32"), std::ios::binary);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(p[i]);
    const char b[4] = {static_cast<char>(u), static_cast<char>(u >> 8), static_cast<char>(u >> 16),
                       static_cast<char>(u >> 24)};
    raw.write(b, 4);
  }
}

// ---------------------------------------------------------------------------
// Curves

struct CurvePoint {
  std::int64_t step = 0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<double> per_run;  // NaN where a run has no value in this bin
};

namespace detail {

inline const std::set<std::string>& non_metric_keys() {
  static const std::set<std::string> keys{"iter", "step", "episode", "episodes", "kind", "variant",
                                          "background"};
  return keys;
}

/// (step, value) series of `metric` from one run directory.
inline std::vector<std::pair<std::int64_t, double>> load_series(const std::filesystem::path& run,
                                                                const std::string& metric,
                                                                std::set<std::string>& available) {
  std::vector<std::pair<std::int64_t, double>> series;
  if (std::filesystem::exists(run / "train_log.jsonl"))
    for (const auto& rec : read_jsonl(run / "train_log.jsonl"))
      for (const auto& [key, value] : rec.items()) {
        if (!value.is_number() || non_metric_keys().count(key)) continue;
        available.insert(key);
        if (key == metric) series.emplace_back(rec.at("step").get<std::int64_t>(), value.get<double>());
      }
  if (std::filesystem::exists(run / "eval_log.jsonl"))
    for (const auto& rec : read_jsonl(run / "eval_log.jsonl")) {
      const auto name = "eval_return_" + rec.at("background").get<std::string>();
      available.insert(name);
      if (name == metric) series.emplace_back(rec.at("step").get<std::int64_t>(), rec.at("mean_return").get<double>());
    }
  return series;
}

inline void draw_line(std::vector<std::uint8_t>& rgb, int w, int h, int x0, int y0, int x1, int y1,
                      std::array<std::uint8_t, 3> color) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    if (x0 >= 0 && x0 < w && y0 >= 0 && y0 < h)
      for (int c = 0; c < 3; ++c) rgb[(static_cast<std::size_t>(y0) * w + x0) * 3 + c] = color[c];
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) { err += dy; x0 += sx; }
    if (e2 <= dx) { err += dx; y0 += sy; }
  }
}

}  // namespace detail

/// Per-run metric against env steps, binned to at most `max_points`, with the
/// across-run median and min-max band. Writes `image` (png) and `table` (text).
inline std::vector<CurvePoint> plot_curves(const std::vector<std::filesystem::path>& run_dirs,
                                           const std::string& metric, const std::filesystem::path& image,
                                           const std::filesystem::path& table, int max_points = 100) {
  if (run_dirs.empty()) throw UsageError("plot: no run directories given");
  std::set<std::string> available;
  std::vector<std::vector<std::pair<std::int64_t, double>>> runs;
  for (const auto& dir : run_dirs) runs.push_back(detail::load_series(dir, metric, available));
  std::int64_t lo = std::numeric_limits<std::int64_t>::max(), hi = std::numeric_limits<std::int64_t>::min();
  std::set<std::int64_t> distinct;
  for (const auto& s : runs)
    for (const auto& [step, v] : s) {
      lo = std::min(lo, step);
      hi = std::max(hi, step);
      distinct.insert(step);
    }
  if (distinct.empty()) {
    std::string names;
    for (const auto& a : available) names += (names.empty() ? "" : ", ") + a;
    throw ArgumentError("metric '" + metric + "' not found; available metrics: " + names);
  }

  // Bin edges: the distinct steps themselves when few, otherwise equal-width bins.
  std::vector<std::int64_t> edges;
  if (static_cast<int>(distinct.size()) <= max_points) {
    edges.assign(distinct.begin(), distinct.end());
  } else {
    for (int b = 1; b <= max_points; ++b) edges.push_back(lo + (hi - lo) * b / max_points);
  }
  auto bin_of = [&](std::int64_t step) {
    return static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), step) - edges.begin());
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<CurvePoint> points(edges.size());
  for (std::size_t b = 0; b < edges.size(); ++b) {
    points[b].step = edges[b];
    points[b].per_run.assign(runs.size(), nan);
  }
  for (std::size_t r = 0; r < runs.size(); ++r) {
    std::vector<double> sum(edges.size(), 0.0);
    std::vector<int> count(edges.size(), 0);
    for (const auto& [step, v] : runs[r]) {
      const auto b = bin_of(step);
      sum[b] += v;
      ++count[b];
    }
    for (std::size_t b = 0; b < edges.size(); ++b)
      if (count[b] > 0) points[b].per_run[r] = sum[b] / count[b];
  }
  std::vector<CurvePoint> kept;
  for (auto& p : points) {
    std::vector<double> vals;
    for (double v : p.per_run)
      if (!std::isnan(v)) vals.push_back(v);
    if (vals.empty()) continue;
    p.median = median_of(vals);
    p.min = *std::min_element(vals.begin(), vals.end());
    p.max = *std::max_element(vals.begin(), vals.end());
    kept.push_back(std::move(p));
  }

  {
    std::ofstream out(table);
    if (!out) throw ArgumentError("cannot write " + table.string());
    out << "# metric " << metric << '\n' << "step\tmedian\tmin\tmax";
    for (std::size_t r = 0; r < runs.size(); ++r) out << "\trun" << r;
    out << '\n';
    out.precision(10);
    for (const auto& p : kept) {
      out << p.step << '\t' << p.median << '\t' << p.min << '\t' << p.max;
      for (double v : p.per_run) out << '\t' << v;
      out << '\n';
    }
  }

  constexpr int W = 640, H = 400, margin = 30;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(W) * H * 3, 255);
  double ymin = kept.front().min, ymax = kept.front().max;
  for (const auto& p : kept) {
    ymin = std::min(ymin, p.min);
    ymax = std::max(ymax, p.max);
  }
  if (ymax - ymin < 1e-12) { ymin -= 1.0; ymax += 1.0; }
  const double x0 = static_cast<double>(kept.front().step), x1 = static_cast<double>(kept.back().step);
  auto px = [&](double s) {
    return x1 > x0 ? margin + static_cast<int>((s - x0) / (x1 - x0) * (W - 2 * margin)) : W / 2;
  };
  auto py = [&](double v) { return H - margin - static_cast<int>((v - ymin) / (ymax - ymin) * (H - 2 * margin)); };
  for (std::size_t i = 0; i + 1 < kept.size(); ++i) {
    // band: vertical fill between min and max, interpolated across the segment
    const int xa = px(static_cast<double>(kept[i].step)), xb = px(static_cast<double>(kept[i + 1].step));
    for (int x = xa; x <= xb; ++x) {
      const double t = xb > xa ? static_cast<double>(x - xa) / (xb - xa) : 0.0;
      const int ylo = py(kept[i].min + t * (kept[i + 1].min - kept[i].min));
      const int yhi = py(kept[i].max + t * (kept[i + 1].max - kept[i].max));
      detail::draw_line(rgb, W, H, x, ylo, x, yhi, {190, 210, 240});
    }
  }
  const std::array<std::uint8_t, 3> axis{0, 0, 0};
  detail::draw_line(rgb, W, H, margin, H - margin, W - margin, H - margin, axis);
  detail::draw_line(rgb, W, H, margin, margin, margin, H - margin, axis);
  for (std::size_t i = 0; i + 1 < kept.size(); ++i)
    detail::draw_line(rgb, W, H, px(static_cast<double>(kept[i].step)), py(kept[i].median),
                      px(static_cast<double>(kept[i + 1].step)), py(kept[i + 1].median), {20, 60, 160});
  write_png_rgb(image, W, H, rgb);
  return kept;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradcheckOptions {
  int batch = 2;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the elementwise relative error.
  double floor = 1e-6;
  std::uint64_t seed = 3;
  // Heads and target branch built so every prediction equals its target.
  bool perfect_prediction = false;
  // Analytic side uses l_action + l_fwd - l_bwd; the numeric side the true loss.
  bool corrupt_bwd_sign = false;
};

struct BlockResult {
  std::string objective;
  std::string block;
  std::int64_t parameters = 0;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<BlockResult> blocks;
  double bit_loss = 0.0;
  double critic_loss = 0.0;

  bool passed() const {
    return std::all_of(blocks.begin(), blocks.end(), [](const BlockResult& b) { return b.passed; });
  }

  const BlockResult& find(const std::string& objective, const std::string& block) const {
    for (const auto& b : blocks)
      if (b.objective == objective && b.block == block) return b;
    throw ArgumentError("gradcheck: no block " + objective + "/" + block);
  }

  std::string format() const {
    std::ostringstream os;
    os << "objective  block            params  max_rel_error   result\n";
    for (const auto& b : blocks) {
      char line[128];
      std::snprintf(line, sizeof(line), "%-10s %-16s %6lld  %.3e       %s\n", b.objective.c_str(),
                    b.block.c_str(), static_cast<long long>(b.parameters), b.max_rel_error,
                    b.passed ? "ok" : "FAIL");
      os << line;
    }
    os << (passed() ? "gradcheck passed\n" : "gradcheck FAILED\n");
    return os.str();
  }
};

/// Toy configuration: one 16x16 frame, two filters, every layer at most 8 wide.
inline RunConfig gradcheck_config(std::uint64_t seed) {
  RunConfig cfg;
  cfg.env.height = 16;
  cfg.env.width = 16;
  cfg.env.frame_stack = 1;
  cfg.model = {2, 4, 4, 8, 8, 8};
  cfg.aug.kind = AugKind::overlay;
  cfg.seed = seed;
  return cfg;
}

namespace detail {

inline BlockResult check_block(const std::string& objective, const std::string& name,
                               const std::vector<torch::Tensor>& params,
                               const std::function<double()>& loss_fn, const GradcheckOptions& opt) {
  BlockResult r{objective, name};
  torch::NoGradGuard no_grad;
  for (const auto& p : params) {
    auto analytic = p.grad().defined() ? p.grad().clone() : torch::zeros_like(p);
    auto flat = p.view({-1});
    auto a_flat = analytic.view({-1});
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + opt.step;
      const double plus = loss_fn();
      flat[i] = orig - opt.step;
      const double minus = loss_fn();
      flat[i] = orig;
      const double numeric = (plus - minus) / (2.0 * opt.step);
      const double a = a_flat[i].item<double>();
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
      r.max_rel_error = std::max(r.max_rel_error, rel);
      r.max_abs_analytic = std::max(r.max_abs_analytic, std::abs(a));
    }
    r.parameters += flat.numel();
  }
  r.passed = r.max_rel_error < opt.tolerance;
  return r;
}

inline void zero_module(torch::nn::Linear& layer) {
  torch::NoGradGuard no_grad;
  layer->weight.zero_();
  layer->bias.zero_();
}

}  // namespace detail

/// Adds N(0, scale^2) noise to every parameter of `module`. Finite differences
/// need a generic point: the orthogonal init (zero biases, single-tap kernels)
/// puts pre-activations exactly on ReLU kinks in very narrow nets.
inline void jitter_parameters(torch::nn::Module& module, torch::Generator& gen, double scale) {
  torch::NoGradGuard no_grad;
  for (auto& p : module.parameters()) p.add_(torch::randn(p.sizes(), gen, p.options()) * scale);
}

/// Analytic (autograd) gradients of L_BiT and of the critic loss against central
/// finite differences, block by block, in double precision.
inline GradcheckReport gradcheck(const GradcheckOptions& opt = {}) {
  auto cfg = gradcheck_config(opt.seed);
  Agent agent(cfg);
  auto& fx = agent.extractor();
  auto& heads = agent.bit().heads();
  auto& sac = agent.sac();
  fx.to(torch::kDouble);
  heads->to(torch::kDouble);
  sac.actor()->to(torch::kDouble);
  sac.critic()->to(torch::kDouble);
  sac.critic_target_net()->to(torch::kDouble);

  auto gen = make_torch_generator(derive_seed(opt.seed, 0x9c));
  for (torch::nn::Module* m : std::initializer_list<torch::nn::Module*>{
           fx.encoder().get(), fx.projection().get(), fx.predictor().get(), heads.get(), sac.critic().get()})
    jitter_parameters(*m, gen, 0.1);
  fx.ema_update(1.0);
  const auto dopt = torch::dtype(torch::kDouble);
  const std::int64_t C = cfg.env.channels(), H = cfg.env.height, W = cfg.env.width;
  TransitionBatch batch{torch::rand({opt.batch, C, H, W}, gen, dopt),
                        torch::rand({opt.batch, kActionDim}, gen, dopt) * 2.0 - 1.0,
                        torch::rand({opt.batch, 1}, gen, dopt) - 1.0,
                        torch::rand({opt.batch, C, H, W}, gen, dopt),
                        torch::zeros({opt.batch, 1}, dopt)};
  if (opt.perfect_prediction) {
    detail::zero_module(fx.target_projection()->fc2);
    detail::zero_module(heads->action_head->fc2);
    detail::zero_module(heads->forward_model->fc2);
    detail::zero_module(heads->backward_model->fc2);
    detail::zero_module(sac.critic()->q1->fc3);
    detail::zero_module(sac.critic()->q2->fc3);
    batch.action.zero_();
  }
  const auto obs_aug = agent.bit().augmenter()(batch.obs, 0).to(torch::kDouble);

  GradcheckReport report;
  auto& bit = agent.bit();
  auto bit_loss = [&] {
    return bit.compute(obs_aug, batch.obs, batch.next_obs, batch.action).terms.total.item<double>();
  };
  struct Block {
    std::string name;
    std::vector<torch::Tensor> params;
  };
  const std::vector<Block> bit_blocks{{"encoder", fx.encoder()->parameters()},
                                      {"projection", fx.projection()->parameters()},
                                      {"predictor", fx.predictor()->parameters()},
                                      {"action_head", heads->action_head->parameters()},
                                      {"forward_model", heads->forward_model->parameters()},
                                      {"backward_model", heads->backward_model->parameters()}};
  auto zero_all = [&] {
    for (auto& p : bit.trainable_parameters())
      if (p.grad().defined()) p.grad().zero_();
    for (auto& p : sac.critic()->parameters())
      if (p.grad().defined()) p.grad().zero_();
  };

  zero_all();
  {
    auto f = bit.compute(obs_aug, batch.obs, batch.next_obs, batch.action);
    auto analytic_loss = opt.corrupt_bwd_sign ? f.terms.action + f.terms.fwd - f.terms.bwd : f.terms.total;
    report.bit_loss = f.terms.total.item<double>();
    if (analytic_loss.requires_grad()) analytic_loss.backward();
  }
  for (const auto& b : bit_blocks) report.blocks.push_back(detail::check_block("L_BiT", b.name, b.params, bit_loss, opt));

  torch::Tensor y;
  if (opt.perfect_prediction) {
    y = torch::zeros({opt.batch, 1}, dopt);
  } else {
    y = sac.compute_target(batch).to(torch::kDouble);
  }
  auto critic_loss = [&] { return sac.critic_loss(batch.obs, batch.action, y).item<double>(); };
  zero_all();
  {
    auto loss = sac.critic_loss(batch.obs, batch.action, y);
    report.critic_loss = loss.item<double>();
    loss.backward();
  }
  const std::vector<Block> critic_blocks{{"encoder", fx.encoder()->parameters()},
                                         {"q1", sac.critic()->q1->parameters()},
                                         {"q2", sac.critic()->q2->parameters()}};
  for (const auto& b : critic_blocks)
    report.blocks.push_back(detail::check_block("critic", b.name, b.params, critic_loss, opt));
  return report;
}

}  // namespace bit
