#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "bit/replay.hpp"
#include "tiny.hpp"

namespace bit {
namespace {

constexpr std::array<std::int64_t, 3> kShape{3, 4, 4};

// Observation whose every byte is `tag`, so transitions are easy to tell apart.
Observation tagged(std::uint8_t tag) { return {torch::full({3, 4, 4}, tag, torch::kUInt8)}; }

Transition transition(std::uint8_t tag) {
  return {tagged(tag), {tag / 255.0, -tag / 255.0}, -static_cast<double>(tag), tagged(tag + 1), tag % 2 == 0};
}

std::vector<int> tags_of(const TransitionBatch& b) {
  std::vector<int> out;
  for (std::int64_t i = 0; i < b.size(); ++i)
    out.push_back(static_cast<int>(std::lround(b.obs[i][0][0][0].item<float>() * 255.0f)));
  return out;
}

TEST(Replay, FifoEviction) {
  ReplayBuffer rb(2, kShape, 0);
  rb.push(transition(1));
  rb.push(transition(2));
  rb.push(transition(3));
  EXPECT_EQ(rb.size(), 2);
  EXPECT_EQ(tags_of(rb.contents()), (std::vector<int>{2, 3}));
}

TEST(Replay, PushOnEmptyGivesSizeOne) {
  ReplayBuffer rb(5, kShape, 0);
  EXPECT_EQ(rb.size(), 0);
  rb.push(transition(1));
  EXPECT_EQ(rb.size(), 1);
}

TEST(Replay, SizeBoundedByCapacity) {
  ReplayBuffer rb(1000, kShape, 0);
  for (int i = 0; i < 10000; ++i) rb.push(transition(static_cast<std::uint8_t>(i % 200)));
  EXPECT_EQ(rb.size(), 1000);
  auto tags = tags_of(rb.contents());
  EXPECT_EQ(tags.front(), 9000 % 200);
  EXPECT_EQ(tags.back(), 9999 % 200);
}

TEST(Replay, SingleElementSample) {
  ReplayBuffer rb(4, kShape, 0);
  rb.push(transition(7));
  auto b = rb.sample(1);
  EXPECT_EQ(b.size(), 1);
  EXPECT_EQ(tags_of(b), std::vector<int>{7});
  EXPECT_FLOAT_EQ(b.reward[0][0].item<float>(), -7.0f);
  EXPECT_FLOAT_EQ(b.action[0][0].item<float>(), static_cast<float>(7 / 255.0));
  EXPECT_FLOAT_EQ(b.done[0][0].item<float>(), 0.0f);
  EXPECT_FLOAT_EQ(b.next_obs[0][0][0][0].item<float>(), 8.0f / 255.0f);
}

TEST(Replay, BatchShapesStackAlongLeadingAxis) {
  ReplayBuffer rb(10, kShape, 0);
  for (int i = 0; i < 10; ++i) rb.push(transition(static_cast<std::uint8_t>(i)));
  auto b = rb.sample(6);
  EXPECT_EQ(b.obs.sizes(), (std::vector<std::int64_t>{6, 3, 4, 4}));
  EXPECT_EQ(b.next_obs.sizes(), b.obs.sizes());
  EXPECT_EQ(b.action.sizes(), (std::vector<std::int64_t>{6, 2}));
  EXPECT_EQ(b.reward.sizes(), (std::vector<std::int64_t>{6, 1}));
  EXPECT_EQ(b.done.sizes(), (std::vector<std::int64_t>{6, 1}));
  EXPECT_EQ(b.obs.scalar_type(), torch::kFloat32);
}

TEST(Replay, FixedSeedFixedIndices) {
  ReplayBuffer a(50, kShape, 123), b(50, kShape, 123), c(50, kShape, 124);
  for (int i = 0; i < 50; ++i) {
    a.push(transition(static_cast<std::uint8_t>(i)));
    b.push(transition(static_cast<std::uint8_t>(i)));
    c.push(transition(static_cast<std::uint8_t>(i)));
  }
  for (int round = 0; round < 3; ++round) {
    const auto ia = a.sample_indices(50);
    EXPECT_EQ(ia, b.sample_indices(50));
    EXPECT_NE(ia, c.sample_indices(50));
  }
}

TEST(Replay, UniformWithinFiveSigma) {
  // Each of 10 slots is Binomial(n, 1/10): mean n/10, sd sqrt(n * 0.1 * 0.9).
  ReplayBuffer rb(10, kShape, 2024);
  for (int i = 0; i < 10; ++i) rb.push(transition(static_cast<std::uint8_t>(i)));
  constexpr int n = 100000;
  std::vector<int> counts(10, 0);
  for (int draw = 0; draw < n; draw += 10)
    for (auto i : rb.sample_indices(10)) ++counts.at(i);
  const double mean = n * 0.1, sd = std::sqrt(n * 0.1 * 0.9);
  for (int k = 0; k < 10; ++k) EXPECT_LT(std::abs(counts[k] - mean), 5.0 * sd) << "slot " << k;
}

TEST(Replay, NotReadyWhenTooSmall) {
  ReplayBuffer rb(10, kShape, 0);
  EXPECT_THROW(rb.sample(1), NotReadyError);
  rb.push(transition(1));
  EXPECT_THROW(rb.sample(2), NotReadyError);
  EXPECT_THROW(rb.sample(0), ArgumentError);
}

TEST(Replay, InvalidTransitionsRejected) {
  ReplayBuffer rb(10, kShape, 0);
  auto t = transition(1);
  t.obs = Observation{torch::zeros({3, 5, 4}, torch::kUInt8)};
  EXPECT_THROW(rb.push(t), ArgumentError);
  t = transition(1);
  t.next_obs = Observation{torch::zeros({3, 4, 4}, torch::kFloat32)};
  EXPECT_THROW(rb.push(t), ArgumentError);
  t = transition(1);
  t.reward = std::nan("");
  EXPECT_THROW(rb.push(t), ArgumentError);
  t = transition(1);
  t.action = {1.5, 0.0};
  EXPECT_THROW(rb.push(t), ArgumentError);
  EXPECT_EQ(rb.size(), 0);
  EXPECT_THROW(ReplayBuffer(0, kShape, 0), ArgumentError);
}

TEST(Replay, SamplesAreValueCopies) {
  ReplayBuffer rb(3, kShape, 0);
  auto t = transition(9);
  rb.push(t);
  t.obs.frames.fill_(0);  // caller mutation after push
  auto b = rb.sample(1);
  b.obs.fill_(0.0f);
  b.reward.fill_(100.0f);
  auto again = rb.sample(1);
  EXPECT_EQ(tags_of(again), std::vector<int>{9});
  EXPECT_FLOAT_EQ(again.reward[0][0].item<float>(), -9.0f);
}

TEST(Replay, SnapshotRoundTrip) {
  testing::TempDir dir("replay");
  ReplayBuffer rb(4, kShape, 0);
  for (int i = 0; i < 6; ++i) rb.push(transition(static_cast<std::uint8_t>(10 + i)));
  rb.save(dir.path() / "buf.bin");
  auto back = ReplayBuffer::load(dir.path() / "buf.bin", 0);
  EXPECT_EQ(back.size(), 4);
  EXPECT_EQ(back.capacity(), 4);
  const auto x = rb.contents(), y = back.contents();
  EXPECT_TRUE(x.obs.equal(y.obs));
  EXPECT_TRUE(x.next_obs.equal(y.next_obs));
  EXPECT_TRUE(x.action.equal(y.action));
  EXPECT_TRUE(x.reward.equal(y.reward));
  EXPECT_TRUE(x.done.equal(y.done));
  // FIFO continues from the oldest element after reload.
  back.push(transition(50));
  EXPECT_EQ(tags_of(back.contents()), (std::vector<int>{13, 14, 15, 50}));
}

TEST(Replay, SnapshotHeaderIsLittleEndian) {
  testing::TempDir dir("replay_hdr");
  ReplayBuffer rb(258, kShape, 0);
  rb.push(transition(1));
  rb.save(dir.path() / "buf.bin");
  std::ifstream in(dir.path() / "buf.bin", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  ASSERT_GE(bytes.size(), 56u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "BITRPLY1");
  EXPECT_EQ(bytes[8], 2);  // 258 = 0x0102
  EXPECT_EQ(bytes[9], 1);
  EXPECT_EQ(bytes[16], 1);  // size
  EXPECT_EQ(bytes.size(), 56u + 2 * 48 + 13);
}

TEST(Replay, LoadRejectsGarbage) {
  testing::TempDir dir("replay_bad");
  std::ofstream(dir.path() / "bad.bin") << "not a buffer";
  EXPECT_THROW(ReplayBuffer::load(dir.path() / "bad.bin", 0), ArgumentError);
  EXPECT_THROW(ReplayBuffer::load(dir.path() / "missing.bin", 0), ArgumentError);
}

}  // namespace
}  // namespace bit
