#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "bit/env_toy.hpp"
#include "bit/errors.hpp"
#include "bit/rng.hpp"

namespace bit {

struct Transition {
  Observation obs;
  Action action;
  double reward = 0.0;
  Observation next_obs;
  bool done = false;
};

/// Stacked along a leading batch axis. Pixels are float in [0, 1].
struct TransitionBatch {
  torch::Tensor obs;       // (B, 3k, H, W)
  torch::Tensor action;    // (B, 2)
  torch::Tensor reward;    // (B, 1)
  torch::Tensor next_obs;  // (B, 3k, H, W)
  torch::Tensor done;      // (B, 1), 0 or 1

  std::int64_t size() const { return obs.defined() ? obs.size(0) : 0; }

  TransitionBatch to(torch::Dtype dtype) const {
    return {obs.to(dtype), action.to(dtype), reward.to(dtype), next_obs.to(dtype), done.to(dtype)};
  }
};

/// Fixed-capacity FIFO store. Pixels are kept as bytes and converted on sampling;
/// storage grows on demand up to `capacity`.
class ReplayBuffer {
 public:
  ReplayBuffer(std::int64_t capacity, std::array<std::int64_t, 3> obs_shape, std::uint64_t seed)
      : capacity_(capacity), shape_(obs_shape), rng_(seed) {
    if (capacity < 1) throw ArgumentError("replay capacity must be >= 1");
    for (auto d : shape_)
      if (d < 1) throw ArgumentError("replay observation shape must be positive");
  }

  std::int64_t capacity() const { return capacity_; }
  std::int64_t size() const { return size_; }
  const std::array<std::int64_t, 3>& obs_shape() const { return shape_; }

  void push(const Transition& t) {
    check_obs(t.obs, "obs");
    check_obs(t.next_obs, "next_obs");
    if (!std::isfinite(t.reward)) throw ArgumentError("replay: reward must be finite");
    if (!std::isfinite(t.action.x) || !std::isfinite(t.action.y) || std::abs(t.action.x) > 1.0 ||
        std::abs(t.action.y) > 1.0)
      throw ArgumentError("replay: action components must lie in [-1, 1]");
    const std::int64_t slot = size_ < capacity_ ? size_ : head_;
    if (slot == static_cast<std::int64_t>(records_.size())) records_.emplace_back();
    auto& r = records_[slot];
    r.obs = bytes_of(t.obs);
    r.next_obs = bytes_of(t.next_obs);
    r.action = {static_cast<float>(t.action.x), static_cast<float>(t.action.y)};
    r.reward = static_cast<float>(t.reward);
    r.done = t.done;
    if (size_ < capacity_) {
      ++size_;
    } else {
      head_ = (head_ + 1) % capacity_;
    }
  }

  /// `n` uniform draws with replacement, as storage slots.
  std::vector<std::int64_t> sample_indices(std::int64_t n) {
    if (n < 1) throw ArgumentError("replay: sample size must be >= 1");
    if (size_ < n) throw NotReadyError("replay holds " + std::to_string(size_) + " transitions, " +
                                       std::to_string(n) + " requested");
    std::vector<std::int64_t> idx(n);
    for (auto& i : idx) i = static_cast<std::int64_t>(rng_.uniform_int(size_));
    return idx;
  }

  TransitionBatch sample(std::int64_t n) { return gather(sample_indices(n)); }

  /// Copies out the given storage slots.
  TransitionBatch gather(const std::vector<std::int64_t>& slots) const {
    const auto n = static_cast<std::int64_t>(slots.size());
    const auto frame = frame_bytes();
    auto obs = torch::empty({n, shape_[0], shape_[1], shape_[2]}, torch::kUInt8);
    auto next = torch::empty_like(obs);
    auto action = torch::empty({n, kActionDim}, torch::kFloat32);
    auto reward = torch::empty({n, 1}, torch::kFloat32);
    auto done = torch::empty({n, 1}, torch::kFloat32);
    auto* po = obs.data_ptr<std::uint8_t>();
    auto* pn = next.data_ptr<std::uint8_t>();
    auto* pa = action.data_ptr<float>();
    auto* pr = reward.data_ptr<float>();
    auto* pd = done.data_ptr<float>();
    for (std::int64_t i = 0; i < n; ++i) {
      const auto& r = records_.at(slots[i]);
      std::memcpy(po + i * frame, r.obs.data(), frame);
      std::memcpy(pn + i * frame, r.next_obs.data(), frame);
      pa[2 * i] = r.action[0];
      pa[2 * i + 1] = r.action[1];
      pr[i] = r.reward;
      pd[i] = r.done ? 1.0f : 0.0f;
    }
    return {obs.to(torch::kFloat32).div_(255.0f), action, reward,
            next.to(torch::kFloat32).div_(255.0f), done};
  }

  /// Insertion-ordered contents, oldest first.
  TransitionBatch contents() const {
    std::vector<std::int64_t> slots(size_);
    for (std::int64_t i = 0; i < size_; ++i) slots[i] = ordered_slot(i);
    return gather(slots);
  }

  Rng& rng() { return rng_; }

  // Layout: magic "BITRPLY1", u64 capacity, u64 size, u64 c, u64 h, u64 w, u64 action_dim,
  // then per transition oldest first: obs bytes, next_obs bytes, f32 action[2], f32 reward,
  // u8 done. Integers and floats little-endian.
  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot open " + path.string() + " for writing");
    out.write(kMagic, 8);
    for (std::uint64_t v : {static_cast<std::uint64_t>(capacity_), static_cast<std::uint64_t>(size_),
                            static_cast<std::uint64_t>(shape_[0]), static_cast<std::uint64_t>(shape_[1]),
                            static_cast<std::uint64_t>(shape_[2]), static_cast<std::uint64_t>(kActionDim)})
      write_le(out, v);
    for (std::int64_t i = 0; i < size_; ++i) {
      const auto& r = records_[ordered_slot(i)];
      out.write(reinterpret_cast<const char*>(r.obs.data()), static_cast<std::streamsize>(r.obs.size()));
      out.write(reinterpret_cast<const char*>(r.next_obs.data()),
                static_cast<std::streamsize>(r.next_obs.size()));
      write_le(out, std::bit_cast<std::uint32_t>(r.action[0]));
      write_le(out, std::bit_cast<std::uint32_t>(r.action[1]));
      write_le(out, std::bit_cast<std::uint32_t>(r.reward));
      const char d = r.done ? 1 : 0;
      out.write(&d, 1);
    }
    if (!out) throw ArgumentError("failed writing " + path.string());
  }

  static ReplayBuffer load(const std::filesystem::path& path, std::uint64_t seed) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArgumentError("cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ArgumentError(path.string() + ": not a replay snapshot");
    std::uint64_t hdr[6];
    for (auto& v : hdr) v = read_le<std::uint64_t>(in);
    if (!in || hdr[5] != kActionDim) throw ArgumentError(path.string() + ": bad replay header");
    ReplayBuffer buf(static_cast<std::int64_t>(hdr[0]),
                     {static_cast<std::int64_t>(hdr[2]), static_cast<std::int64_t>(hdr[3]),
                      static_cast<std::int64_t>(hdr[4])},
                     seed);
    const auto n = static_cast<std::int64_t>(hdr[1]);
    if (n > buf.capacity_) throw ArgumentError(path.string() + ": size exceeds capacity");
    const auto frame = buf.frame_bytes();
    buf.records_.resize(n);
    for (auto& r : buf.records_) {
      r.obs.resize(frame);
      r.next_obs.resize(frame);
      in.read(reinterpret_cast<char*>(r.obs.data()), static_cast<std::streamsize>(frame));
      in.read(reinterpret_cast<char*>(r.next_obs.data()), static_cast<std::streamsize>(frame));
      r.action[0] = std::bit_cast<float>(read_le<std::uint32_t>(in));
      r.action[1] = std::bit_cast<float>(read_le<std::uint32_t>(in));
      r.reward = std::bit_cast<float>(read_le<std::uint32_t>(in));
      char d = 0;
      in.read(&d, 1);
      r.done = d != 0;
    }
    if (!in) throw ArgumentError(path.string() + ": truncated replay snapshot");
    buf.size_ = n;
    buf.head_ = 0;
    return buf;
  }

 private:
  static constexpr char kMagic[8] = {'B', 'I', 'T', 'R', 'P', 'L', 'Y', '1'};

  struct Record {
    std::vector<std::uint8_t> obs;
    std::vector<std::uint8_t> next_obs;
    std::array<float, 2> action{};
    float reward = 0.0f;
    bool done = false;
  };

  std::size_t frame_bytes() const {
    return static_cast<std::size_t>(shape_[0] * shape_[1] * shape_[2]);
  }

  std::int64_t ordered_slot(std::int64_t i) const {
    return size_ < capacity_ ? i : (head_ + i) % capacity_;
  }

  void check_obs(const Observation& o, const char* what) const {
    if (!o.frames.defined() || o.frames.scalar_type() != torch::kUInt8 || o.frames.dim() != 3 ||
        o.frames.size(0) != shape_[0] || o.frames.size(1) != shape_[1] || o.frames.size(2) != shape_[2])
      throw ArgumentError(std::string("replay: ") + what + " shape does not match the buffer");
  }

  static std::vector<std::uint8_t> bytes_of(const Observation& o) {
    auto c = o.frames.contiguous();
    const auto* p = c.data_ptr<std::uint8_t>();
    return {p, p + c.numel()};
  }

  template <class T>
  static void write_le(std::ostream& out, T v) {
    unsigned char b[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), sizeof(T));
  }

  template <class T>
  static T read_le(std::istream& in) {
    unsigned char b[sizeof(T)] = {};
    in.read(reinterpret_cast<char*>(b), sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
    return v;
  }

  std::int64_t capacity_;
  std::array<std::int64_t, 3> shape_;
  std::int64_t size_ = 0;
  std::int64_t head_ = 0;  // oldest slot once full
  std::vector<Record> records_;
  Rng rng_;
};

}  // namespace bit
