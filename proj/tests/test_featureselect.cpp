#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>

#include "dcqmc/featureselect.hpp"

using namespace dcqmc;

namespace {

// Entropy-based oracle: I(A;B) = H(A) + H(B) - H(A,B).
double entropy_mi(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pab;
  for (std::size_t t = 0; t < a.size(); ++t) {
    pa[a[t]] += 1;
    pb[b[t]] += 1;
    pab[{a[t], b[t]}] += 1;
  }
  auto h = [&](const auto& m) {
    double e = 0;
    for (const auto& [key, c] : m) e -= c / a.size() * std::log(c / a.size());
    return e;
  };
  return h(pa) + h(pb) - h(pab);
}

// Pixels 0..2 copy label bits, the rest are noise.
LabeledDataset synthetic(std::size_t samples, std::size_t pixels, std::uint64_t seed) {
  Rng rng(seed);
  LabeledDataset d;
  d.n_pixels = pixels;
  d.n_classes = 4;
  for (std::size_t s = 0; s < samples; ++s) {
    const auto y = static_cast<std::uint8_t>(uniform_index(rng, 4));
    d.labels.push_back(y);
    for (std::size_t p = 0; p < pixels; ++p) {
      std::uint8_t v = uniform01(rng) < 0.5;
      if (p == 0) v = y & 1u;
      if (p == 1) v = (y >> 1) & 1u;
      if (p == 2) v = uniform01(rng) < 0.9 ? (y & 1u) : !(y & 1u);
      d.images.push_back(v);
    }
  }
  return d;
}

}  // namespace

TEST(Idx, RoundTripAndValidation) {
  RawDataset d;
  d.rows = 2;
  d.cols = 3;
  d.pixels = {0, 1, 2, 3, 4, 5, 250, 251, 252, 253, 254, 255};
  d.labels = {7, 3};
  const auto img = encode_idx_images(d), lbl = encode_idx_labels(d);
  EXPECT_EQ(img[2], 0x08);
  EXPECT_EQ(img[3], 0x03);
  const auto back = decode_idx(img, lbl, "img", "lbl");
  EXPECT_EQ(back.pixels, d.pixels);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.rows, 2u);

  auto short_img = img;
  short_img.pop_back();
  EXPECT_THROW(decode_idx(short_img, lbl, "img", "lbl"), FormatError);
  auto bad_magic = img;
  bad_magic[3] = 0x01;
  EXPECT_THROW(decode_idx(bad_magic, lbl, "img", "lbl"), FormatError);
  RawDataset one = d;
  one.labels.pop_back();
  one.pixels.resize(6);
  EXPECT_THROW(decode_idx(img, encode_idx_labels(one), "img", "lbl"), FormatError);

  const auto dir = std::filesystem::temp_directory_path() / "dcqmc_test_idx";
  std::filesystem::remove_all(dir);
  save_idx(dir / "i.idx", dir / "l.idx", d);
  EXPECT_EQ(load_idx(dir / "i.idx", dir / "l.idx").pixels, d.pixels);
}

TEST(Preprocess, DownsampleFloorsTileMeanAndBinarize) {
  RawDataset d;
  d.rows = 2;
  d.cols = 4;
  d.pixels = {1, 2, 255, 255, 3, 3, 255, 254};
  d.labels = {5};
  const auto small = downsample(d, 2);
  EXPECT_EQ(small.rows, 1u);
  EXPECT_EQ(small.cols, 2u);
  EXPECT_EQ(small.pixels, (std::vector<std::uint8_t>{2, 254}));
  const auto b = binarize(small, 127, 10);
  EXPECT_EQ(b.images, (std::vector<std::uint8_t>{0, 1}));
  EXPECT_EQ(b.n_classes, 10u);
  EXPECT_EQ(binarize(small).n_classes, 6u);
  EXPECT_THROW(downsample(d, 3), InvalidArgument);
  EXPECT_THROW(binarize(small, 127, 3), InvalidArgument);
}

TEST(MutualInformation, KnownValues) {
  LabeledDataset d;
  d.n_pixels = 2;
  d.n_classes = 2;
  // Pixel 0 equals the label, pixel 1 independent of everything.
  for (int s = 0; s < 4; ++s) {
    d.labels.push_back(s & 1);
    d.images.push_back(s & 1);
    d.images.push_back((s >> 1) & 1);
  }
  EXPECT_NEAR(mutual_info_feature_label(d, 0), std::numbers::ln2, 1e-15);
  EXPECT_NEAR(mutual_info_feature_label(d, 1), 0.0, 1e-15);
  EXPECT_NEAR(mutual_info_pairwise(d, 0, 1), 0.0, 1e-15);
}

TEST(MutualInformation, TableMatchesEntropyOracle) {
  const auto d = synthetic(700, 9, 1);
  const auto t = build_mi_table(d, 2);
  ASSERT_EQ(t.n(), 9u);
  std::vector<int> y(d.labels.begin(), d.labels.end());
  auto column = [&](std::size_t p) {
    std::vector<int> c;
    for (std::size_t s = 0; s < d.samples(); ++s) c.push_back(d.at(s, p));
    return c;
  };
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_NEAR(t.label(i), entropy_mi(column(i), y), 1e-12);
    for (std::size_t j = i + 1; j < 9; ++j) {
      EXPECT_NEAR(t.pair(i, j), entropy_mi(column(i), column(j)), 1e-12);
      EXPECT_EQ(t.pair(i, j), t.pair(j, i));
    }
  }
  EXPECT_THROW(t.pair(3, 3), InvalidArgument);
  const auto csv = t.to_csv();
  EXPECT_EQ(csv.substr(0, 10), "i,j,value\n");
  EXPECT_NE(csv.find("\n0,y,"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 9 + 36);
}

TEST(FeatureQubo, CoefficientsAndThreshold) {
  const MiTable t({0.5, 0.2, 0.1}, {0.04, 0.0001, 0.3});
  const auto q = build_feature_qubo(t, 3, 1e-3);
  EXPECT_DOUBLE_EQ(q.linear()[0], -0.5);
  EXPECT_DOUBLE_EQ(q.coupling(0, 1), 0.02);
  EXPECT_DOUBLE_EQ(q.coupling(0, 2), 0.0);
  EXPECT_DOUBLE_EQ(q.coupling(1, 2), 0.15);
  EXPECT_EQ(q.edges().size(), 2u);
  EXPECT_THROW(build_feature_qubo(t, 1), InvalidArgument);
}

TEST(Masks, IndicesAndBaselines) {
  const auto m = FeatureMask::from_indices(6, {4, 1});
  EXPECT_EQ(m.indices(), (std::vector<std::size_t>{1, 4}));
  EXPECT_EQ(m.to_text(), "1\n4\n");
  EXPECT_THROW(FeatureMask::from_indices(6, {1, 1}), InvalidArgument);
  Rng rng(3);
  EXPECT_EQ(random_k_mask(30, 7, rng).indices().size(), 7u);
  const MiTable t({0.1, 0.5, 0.5, 0.05}, std::vector<double>(6, 0.0));
  EXPECT_EQ(linear_terms_mask(t, 2).indices(), (std::vector<std::size_t>{1, 2}));
}

TEST(Classifier, InformativePixelsBeatNoise) {
  const auto train = synthetic(2000, 12, 4), test = synthetic(500, 12, 5);
  const double good = evaluate_mask(train, test, FeatureMask::from_indices(12, {0, 1}));
  const double noise = evaluate_mask(train, test, FeatureMask::from_indices(12, {5, 6}));
  EXPECT_GT(good, 0.99);
  EXPECT_LT(noise, 0.35);
  EXPECT_EQ(good, evaluate_mask(train, test, FeatureMask::from_indices(12, {0, 1})));
  EXPECT_THROW(evaluate_mask(train, test, FeatureMask::from_indices(12, {})), InvalidArgument);
}

TEST(Selection, QuboMinimiserPrefersInformativeNonRedundantPixels) {
  // Pixel 2 is a noisy copy of pixel 0; with K = 2 the best pair is {0, 1}.
  const auto d = synthetic(4000, 6, 6);
  const auto q = build_feature_qubo(build_mi_table(d), 2);
  const auto table = enumerate_constrained_boltzmann(q, 2, 1.0);
  std::size_t best = 0;
  for (std::size_t s = 1; s < table.size(); ++s)
    if (table.energies[s] < table.energies[best]) best = s;
  EXPECT_EQ(FeatureMask::from_config(unpack_key(table.states[best], 6)).indices(), (std::vector<std::size_t>{0, 1}));
}
