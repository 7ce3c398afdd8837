#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dcqmc/made.hpp"

using namespace dcqmc;

namespace {

std::vector<std::uint8_t> bits_of(std::uint32_t z, std::size_t n) {
  std::vector<std::uint8_t> b(n);
  for (std::size_t t = 0; t < n; ++t) b[t] = (z >> t) & 1u;
  return b;
}

// Bits follow a fixed skewed distribution per weight so training has
// something to learn.
BlockSampleSet skewed_samples(std::size_t size, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  BlockSampleSet set;
  set.block_size = size;
  set.init_angles = {0.0};
  for (std::size_t n = 0; n < count; ++n) {
    std::uint32_t z = 0;
    for (std::size_t t = 0; t < size; ++t)
      if (uniform01(rng) < (t % 2 ? 0.8 : 0.2)) z |= 1u << t;
    set.states.push_back(z);
    set.weights.push_back(static_cast<std::uint16_t>(std::popcount(z)));
    set.provenance.push_back(0);
  }
  return set;
}

}  // namespace

TEST(Made, NormalisedForEveryContext) {
  for (std::size_t size = 1; size <= 10; ++size) {
    const auto m = ConditionalMadeModel::build(size, {3 * size + 2, 2 * size + 1}, size);
    for (std::size_t k = 0; k <= size; ++k) {
      double z = 0;
      for (std::uint32_t s = 0; s < (1u << size); ++s) z += std::exp(m.log_prob_state(s, k));
      EXPECT_NEAR(z, 1.0, 1e-6) << "size " << size << " k " << k;
    }
  }
}

TEST(Made, OutputsDependOnlyOnEarlierBits) {
  const std::size_t size = 6;
  const auto m = ConditionalMadeModel::build(size, {20, 20}, 4);
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = bits_of(static_cast<std::uint32_t>(uniform_index(rng, 64)), size);
    const auto base = m.logits(x, 3);
    for (std::size_t flip = 0; flip < size; ++flip) {
      auto y = x;
      y[m.ordering()[flip]] ^= 1u;
      const auto l = m.logits(y, 3);
      for (std::size_t t = 0; t <= flip; ++t) EXPECT_EQ(l[t], base[t]) << "flip " << flip << " output " << t;
    }
  }
  for (const auto& mask : m.masks()) EXPECT_FALSE(mask.empty());
}

TEST(Made, ContextChangesTheDistribution) {
  const auto m = ConditionalMadeModel::build(4, {16, 16}, 5);
  EXPECT_NE(m.log_prob_state(0b0101, 1), m.log_prob_state(0b0101, 3));
  EXPECT_THROW(m.log_prob_state(0, 5), InvalidArgument);
}

TEST(Made, ZeroParametersGiveUniform) {
  auto m = ConditionalMadeModel::build(5, {10}, 6);
  m.zero_parameters();
  for (std::uint32_t s = 0; s < 32; ++s) EXPECT_NEAR(m.log_prob_state(s, 2), -5 * std::numbers::ln2, 1e-12);
}

TEST(Made, GradientMatchesFiniteDifferences) {
  auto m = ConditionalMadeModel::build(4, {12, 12}, 7);
  const auto x = bits_of(0b1011, 4);
  const std::size_t k = 3;
  std::vector<double> grad(m.parameter_count(), 0.0);
  m.accumulate_gradient(x, k, grad);
  auto params = m.parameters();
  const double h = 1e-6;
  std::size_t checked = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const double keep = params[p];
    params[p] = keep + h;
    const double up = m.log_prob(x, k);
    params[p] = keep - h;
    const double down = m.log_prob(x, k);
    params[p] = keep;
    const double fd = (up - down) / (2 * h);
    EXPECT_LE(std::abs(fd - grad[p]), 1e-4 * std::max(1.0, std::abs(fd))) << "param " << p;
    ++checked;
  }
  EXPECT_EQ(checked, m.parameter_count());
}

TEST(Made, SamplesMatchExactConditional) {
  const std::size_t size = 4, k = 2, draws = 100000;
  const auto m = ConditionalMadeModel::build(size, {16, 16}, 8);
  Rng rng(9);
  std::vector<double> counts(16, 0);
  for (std::size_t t = 0; t < draws; ++t) {
    const auto d = m.sample(k, rng);
    std::uint32_t z = 0;
    for (std::size_t b = 0; b < size; ++b) z |= std::uint32_t{d.bits[b]} << b;
    ASSERT_NEAR(d.log_prob, m.log_prob_state(z, k), 1e-12);
    counts[z] += 1;
  }
  double tv = 0;
  for (std::uint32_t z = 0; z < 16; ++z) tv += 0.5 * std::abs(counts[z] / draws - std::exp(m.log_prob_state(z, k)));
  EXPECT_LT(tv, 0.01);
}

TEST(Made, TrainingRaisesLikelihoodTowardsTruth) {
  const auto data = skewed_samples(6, 6000, 10);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.seed = 3;
  auto m = ConditionalMadeModel::build(6, cfg, 11);
  const auto report = train(m, data, cfg);
  ASSERT_EQ(report.epochs.size(), 15u);
  EXPECT_GT(report.epochs.back().train_ll, report.epochs.front().train_ll - 1e-9);
  // Entropy of the independent Bernoulli(0.2 / 0.8) source, ignoring the context.
  const double h = -6 * (0.2 * std::log(0.2) + 0.8 * std::log(0.8));
  EXPECT_GT(report.epochs.back().val_ll, -h - 0.1);
  EXPECT_FALSE(std::isnan(report.epochs.back().val_ll));

  auto again = ConditionalMadeModel::build(6, cfg, 11);
  train(again, data, cfg);
  EXPECT_TRUE(std::equal(m.parameters().begin(), m.parameters().end(), again.parameters().begin()));
}

TEST(Made, TrainRejectsMismatchedWidth) {
  auto m = ConditionalMadeModel::build(5, {10}, 1);
  EXPECT_THROW(train(m, skewed_samples(6, 10, 1), TrainConfig{}), InvalidArgument);
  TrainConfig bad;
  bad.epochs = 0;
  EXPECT_THROW(train(m, skewed_samples(5, 10, 1), bad), InvalidArgument);
}

TEST(Made, FileRoundTripIsExact) {
  auto m = ConditionalMadeModel::build(5, {13, 7}, 12, {2, 3});
  const auto bytes = m.encode();
  const auto back = ConditionalMadeModel::decode(bytes);
  EXPECT_EQ(back.block_id().s, 2);
  EXPECT_EQ(back.block_id().m, 3);
  EXPECT_EQ(back.hidden_widths(), (std::vector<std::size_t>{13, 7}));
  for (std::uint32_t z = 0; z < 32; ++z) EXPECT_EQ(back.log_prob_state(z, 2), m.log_prob_state(z, 2));
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  EXPECT_THROW(ConditionalMadeModel::decode(cut), FormatError);
  auto bad = bytes;
  bad[1] = '?';
  EXPECT_THROW(ConditionalMadeModel::decode(bad), FormatError);
}
