#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace bit {

/// Orthogonal linear weights, delta-orthogonal convolutions (only the centre tap
/// is non-zero, ReLU gain) and zero biases. Keeps the differences between
/// observations visible in the features at initialisation; the default uniform
/// init shrinks them by orders of magnitude through the conv stack.
inline void orthogonal_init(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& m : module.modules(/*include_self=*/false)) {
    if (auto* linear = m->as<torch::nn::Linear>()) {
      torch::nn::init::orthogonal_(linear->weight);
      linear->bias.zero_();
    } else if (auto* conv = m->as<torch::nn::Conv2d>()) {
      auto& w = conv->weight;
      w.zero_();
      conv->bias.zero_();
      auto centre = torch::empty({w.size(0), w.size(1)});
      torch::nn::init::orthogonal_(centre, std::sqrt(2.0));
      w.select(2, w.size(2) / 2).select(2, w.size(3) / 2).copy_(centre);
    }
  }
}

/// Two-layer perceptron: in -> hidden -> out with a ReLU in between.
struct MlpImpl : torch::nn::Module {
  MlpImpl(std::int64_t in, std::int64_t hidden, std::int64_t out)
      : fc1(register_module("fc1", torch::nn::Linear(in, hidden))),
        fc2(register_module("fc2", torch::nn::Linear(hidden, out))) {
    orthogonal_init(*this);
  }

  torch::Tensor forward(const torch::Tensor& x) { return fc2(torch::relu(fc1(x))); }

  torch::nn::Linear fc1;
  torch::nn::Linear fc2;
};
TORCH_MODULE(Mlp);

/// Three-layer perceptron used by the SAC actor and critics.
struct DeepMlpImpl : torch::nn::Module {
  DeepMlpImpl(std::int64_t in, std::int64_t hidden, std::int64_t out)
      : fc1(register_module("fc1", torch::nn::Linear(in, hidden))),
        fc2(register_module("fc2", torch::nn::Linear(hidden, hidden))),
        fc3(register_module("fc3", torch::nn::Linear(hidden, out))) {
    orthogonal_init(*this);
  }

  torch::Tensor forward(const torch::Tensor& x) {
    return fc3(torch::relu(fc2(torch::relu(fc1(x)))));
  }

  torch::nn::Linear fc1;
  torch::nn::Linear fc2;
  torch::nn::Linear fc3;
};
TORCH_MODULE(DeepMlp);

/// Pixel encoder: four 3x3 convolutions (strides 2,1,1,1) with ReLU, a linear
/// map to d_z and a layer norm on the output.
struct EncoderImpl : torch::nn::Module {
  EncoderImpl(std::int64_t channels, std::int64_t height, std::int64_t width, std::int64_t filters,
              std::int64_t d_z) {
    using torch::nn::Conv2dOptions;
    const std::int64_t strides[4] = {2, 1, 1, 1};
    std::int64_t in = channels;
    for (int i = 0; i < 4; ++i) {
      convs->push_back(torch::nn::Conv2d(Conv2dOptions(in, filters, 3).stride(strides[i])));
      in = filters;
    }
    register_module("convs", convs);
    std::int64_t h = height, w = width;
    for (auto s : strides) {
      h = (h - 3) / s + 1;
      w = (w - 3) / s + 1;
    }
    TORCH_CHECK(h > 0 && w > 0, "encoder: input ", height, "x", width, " too small for the conv stack");
    flat_dim = filters * h * w;
    fc = register_module("fc", torch::nn::Linear(flat_dim, d_z));
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_z})));
    orthogonal_init(*this);
  }

  torch::Tensor forward(torch::Tensor x) {
    for (auto& m : *convs) x = torch::relu(m->as<torch::nn::Conv2d>()->forward(x));
    return norm(fc(x.flatten(1)));
  }

  torch::nn::ModuleList convs;
  torch::nn::Linear fc{nullptr};
  torch::nn::LayerNorm norm{nullptr};
  std::int64_t flat_dim = 0;
};
TORCH_MODULE(Encoder);

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

inline void append_named(NamedTensors& out, const std::string& prefix, const torch::nn::Module& m) {
  for (const auto& item : m.named_parameters(/*recurse=*/true))
    out.emplace_back(prefix + "." + item.key(), item.value());
}

/// FNV-1a over names, shapes and raw bytes.
inline std::uint64_t hash_tensors(const NamedTensors& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : tensors) {
    feed(name.data(), name.size());
    auto c = t.detach().contiguous().cpu();
    for (auto d : c.sizes()) feed(&d, sizeof(d));
    feed(c.data_ptr(), c.numel() * c.element_size());
  }
  return h;
}

}  // namespace bit
