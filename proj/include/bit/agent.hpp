#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>

#include <json.hpp>
#include <torch/torch.h>

#include "bit/augment.hpp"
#include "bit/bit_learner.hpp"
#include "bit/config.hpp"
#include "bit/errors.hpp"
#include "bit/feature_extractor.hpp"
#include "bit/nets.hpp"
#include "bit/sac.hpp"

namespace bit {

/// Everything a run trains: extractor (online + target), BiT heads and SAC.
/// Construction order fixes the initial weights for a given seed.
class Agent {
 public:
  explicit Agent(const RunConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    torch::manual_seed(cfg_.seed);
    extractor_ = std::make_unique<FeatureExtractor>(ExtractorShape::from(cfg_));
    bit_ = std::make_unique<BiTLearner>(
        *extractor_, BiTHeads(cfg_.model.d_p, kActionDim, cfg_.model.head_hidden),
        augment::Augmenter(cfg_.aug, cfg_.env.height, cfg_.env.width),
        BiTOptions{cfg_.bit_lr, LossMask::for_variant(cfg_.ablation), cfg_.detach_pseudo_action});
    sac_ = std::make_unique<SacLearner>(extractor_->encoder(), cfg_.model, cfg_.sac,
                                        derive_seed(cfg_.seed, 0x5ac));
  }

  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  const RunConfig& config() const { return cfg_; }
  FeatureExtractor& extractor() { return *extractor_; }
  BiTLearner& bit() { return *bit_; }
  SacLearner& sac() { return *sac_; }

  /// Policy action for a single observation (uint8 stack or float pixels).
  Action act(const Observation& obs, bool deterministic) {
    torch::NoGradGuard no_grad;
    auto z = extractor_->encode(obs.pixels().unsqueeze(0));
    return sac_->select_action(z, deterministic);
  }

  NamedTensors named_tensors() const {
    NamedTensors out = extractor_->online_parameters();
    for (auto& t : extractor_->target_parameters()) out.push_back(t);
    append_named(out, "heads", *bit_->heads());
    for (auto& t : sac_->named_tensors()) out.push_back(t);
    return out;
  }

  std::uint64_t parameter_hash() const { return hash_tensors(named_tensors()); }

 private:
  RunConfig cfg_;
  std::unique_ptr<FeatureExtractor> extractor_;
  std::unique_ptr<BiTLearner> bit_;
  std::unique_ptr<SacLearner> sac_;
};

// Checkpoint layout (little-endian):
//   "BITCKPT\0" u32 version
//   u64 config_len, config JSON bytes
//   u64 iteration, u64 env_step
//   u64 tensor count, then per tensor: u64 name_len, name, u32 ndim, i64 dims[ndim],
//   f32 data (row-major)
struct CheckpointMeta {
  std::uint64_t iteration = 0;
  std::uint64_t env_step = 0;
};

namespace detail {
inline constexpr char kCkptMagic[8] = {'B', 'I', 'T', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCkptVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
  static_assert(std::is_integral_v<T>);
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  using U = std::make_unsigned_t<T>;
  unsigned char b[sizeof(T)] = {};
  in.read(reinterpret_cast<char*>(b), sizeof(T));
  if (!in) throw ArgumentError("checkpoint truncated");
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(b[i]) << (8 * i);
  return static_cast<T>(u);
}
}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Agent& agent,
                            const CheckpointMeta& meta) {
  using detail::put;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot open " + path.string() + " for writing");
  out.write(detail::kCkptMagic, 8);
  put<std::uint32_t>(out, detail::kCkptVersion);
  const std::string cfg = nlohmann::json(agent.config()).dump();
  put<std::uint64_t>(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put<std::uint64_t>(out, meta.iteration);
  put<std::uint64_t>(out, meta.env_step);
  const auto tensors = agent.named_tensors();
  put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put<std::uint64_t>(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) put<std::int64_t>(out, d);
    auto data = t.detach().to(torch::kFloat32).contiguous();
    const float* p = data.data_ptr<float>();
    for (std::int64_t i = 0; i < data.numel(); ++i) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(p[i]));
  }
  if (!out) throw ArgumentError("failed writing " + path.string());
}

struct LoadedCheckpoint {
  std::unique_ptr<Agent> agent;
  CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  using detail::get;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
    throw ArgumentError(path.string() + " is not a checkpoint");
  if (const auto v = get<std::uint32_t>(in); v != detail::kCkptVersion)
    throw ArgumentError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
  std::string cfg_text(get<std::uint64_t>(in), '\0');
  in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
  auto cfg = nlohmann::json::parse(cfg_text).get<RunConfig>();
  LoadedCheckpoint result;
  result.meta.iteration = get<std::uint64_t>(in);
  result.meta.env_step = get<std::uint64_t>(in);
  result.agent = std::make_unique<Agent>(cfg);
  std::map<std::string, torch::Tensor> slots;
  for (auto& [name, t] : result.agent->named_tensors()) slots.emplace(name, t);
  const auto count = get<std::uint64_t>(in);
  if (count != slots.size()) throw ArgumentError(path.string() + ": tensor count does not match the config");
  torch::NoGradGuard no_grad;
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name(get<std::uint64_t>(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto ndim = get<std::uint32_t>(in);
    std::vector<std::int64_t> dims(ndim);
    for (auto& d : dims) d = get<std::int64_t>(in);
    auto it = slots.find(name);
    if (it == slots.end() || !it->second.sizes().equals(dims))
      throw ArgumentError(path.string() + ": unexpected tensor " + name);
    auto buf = torch::empty(dims, torch::kFloat32);
    float* p = buf.data_ptr<float>();
    for (std::int64_t i = 0; i < buf.numel(); ++i) p[i] = std::bit_cast<float>(get<std::uint32_t>(in));
    it->second.copy_(buf);
  }
  return result;
}

/// FNV-1a over the file bytes.
inline std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace bit
