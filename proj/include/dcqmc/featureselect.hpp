#pragma once

// Feature selection as a fixed-weight QUBO: IDX ingestion, binarisation,
// plug-in mutual information, the relevance/redundancy QUBO and a masked
// multinomial logistic-regression evaluator.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dcqmc/errors.hpp"
#include "dcqmc/io.hpp"
#include "dcqmc/ising.hpp"
#include "dcqmc/parallel.hpp"
#include "dcqmc/random.hpp"

namespace dcqmc {

struct RawDataset {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;  // n_samples * rows * cols, row-major per image
  std::vector<std::uint8_t> labels;

  std::size_t samples() const noexcept { return labels.size(); }
  std::size_t pixels_per_image() const noexcept { return rows * cols; }
};

struct LabeledDataset {
  std::size_t n_pixels = 0;
  std::size_t n_classes = 0;
  std::vector<std::uint8_t> images;  // n_samples * n_pixels, each 0 or 1
  std::vector<std::uint8_t> labels;

  std::size_t samples() const noexcept { return labels.size(); }
  std::uint8_t at(std::size_t sample, std::size_t pixel) const { return images[sample * n_pixels + pixel]; }

  void validate() const {
    if (images.size() != samples() * n_pixels) throw InvalidArgument("dataset: image matrix has wrong size");
    for (auto v : images)
      if (v > 1) throw InvalidArgument("dataset: pixel values must be 0 or 1");
    for (auto l : labels)
      if (l >= n_classes) throw InvalidArgument("dataset: label outside [0, n_classes)");
  }
};

namespace detail {

inline std::uint32_t read_be32(BinaryReader& r) {
  const auto b = r.get_vector<std::uint8_t>(4);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

inline void put_be32(BinaryWriter& w, std::uint32_t v) {
  const std::uint8_t b[4] = {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
                             static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
  w.put_bytes(b);
}

}  // namespace detail

inline RawDataset decode_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes,
                             const std::string& image_name = "images", const std::string& label_name = "labels") {
  RawDataset d;
  BinaryReader ri(image_bytes, image_name);
  if (const auto magic = detail::read_be32(ri); magic != 0x00000803u)
    throw FormatError(image_name + ": bad IDX image magic " + hex64(magic), 0);
  const std::size_t n = detail::read_be32(ri);
  d.rows = detail::read_be32(ri);
  d.cols = detail::read_be32(ri);
  const std::size_t expected = 16 + n * d.rows * d.cols;
  if (image_bytes.size() != expected)
    throw FormatError(image_name + ": expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(image_bytes.size()),
                      std::min(image_bytes.size(), expected));
  d.pixels = ri.get_vector<std::uint8_t>(n * d.rows * d.cols);

  BinaryReader rl(label_bytes, label_name);
  if (const auto magic = detail::read_be32(rl); magic != 0x00000801u)
    throw FormatError(label_name + ": bad IDX label magic " + hex64(magic), 0);
  const std::size_t m = detail::read_be32(rl);
  if (label_bytes.size() != 8 + m)
    throw FormatError(label_name + ": expected " + std::to_string(8 + m) + " bytes, found " +
                          std::to_string(label_bytes.size()),
                      std::min(label_bytes.size(), 8 + m));
  if (m != n) throw FormatError("IDX: image count " + std::to_string(n) + " differs from label count " + std::to_string(m), 4);
  d.labels = rl.get_vector<std::uint8_t>(m);
  return d;
}

inline RawDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  return decode_idx(read_binary_file(images), read_binary_file(labels), images.string(), labels.string());
}

inline std::vector<std::uint8_t> encode_idx_images(const RawDataset& d) {
  BinaryWriter w;
  detail::put_be32(w, 0x00000803u);
  detail::put_be32(w, static_cast<std::uint32_t>(d.samples()));
  detail::put_be32(w, static_cast<std::uint32_t>(d.rows));
  detail::put_be32(w, static_cast<std::uint32_t>(d.cols));
  w.put_bytes(d.pixels);
  return w.bytes();
}

inline std::vector<std::uint8_t> encode_idx_labels(const RawDataset& d) {
  BinaryWriter w;
  detail::put_be32(w, 0x00000801u);
  detail::put_be32(w, static_cast<std::uint32_t>(d.samples()));
  w.put_bytes(d.labels);
  return w.bytes();
}

inline void save_idx(const std::filesystem::path& images, const std::filesystem::path& labels, const RawDataset& d) {
  write_file(images, encode_idx_images(d));
  write_file(labels, encode_idx_labels(d));
}

/// Mean of each factor x factor tile, rounded down.
inline RawDataset downsample(const RawDataset& d, std::size_t factor = 2) {
  if (factor == 0 || d.rows % factor || d.cols % factor)
    throw InvalidArgument("downsample: image dimensions must be divisible by the factor");
  RawDataset out;
  out.rows = d.rows / factor;
  out.cols = d.cols / factor;
  out.labels = d.labels;
  out.pixels.resize(d.samples() * out.rows * out.cols);
  const std::size_t area = factor * factor;
  for (std::size_t s = 0; s < d.samples(); ++s) {
    const std::uint8_t* img = d.pixels.data() + s * d.pixels_per_image();
    for (std::size_t r = 0; r < out.rows; ++r)
      for (std::size_t c = 0; c < out.cols; ++c) {
        unsigned sum = 0;
        for (std::size_t dr = 0; dr < factor; ++dr)
          for (std::size_t dc = 0; dc < factor; ++dc) sum += img[(r * factor + dr) * d.cols + c * factor + dc];
        out.pixels[s * out.rows * out.cols + r * out.cols + c] = static_cast<std::uint8_t>(sum / area);
      }
  }
  return out;
}

/// z = 1 iff raw > threshold. The class count is max label + 1 unless given.
inline LabeledDataset binarize(const RawDataset& raw, std::uint8_t threshold = 127, std::size_t n_classes = 0) {
  LabeledDataset d;
  d.n_pixels = raw.pixels_per_image();
  d.labels = raw.labels;
  d.images.resize(raw.pixels.size());
  for (std::size_t t = 0; t < raw.pixels.size(); ++t) d.images[t] = raw.pixels[t] > threshold ? 1 : 0;
  std::size_t max_label = 0;
  for (auto l : d.labels) max_label = std::max<std::size_t>(max_label, l);
  d.n_classes = n_classes ? n_classes : (d.labels.empty() ? 0 : max_label + 1);
  d.validate();
  return d;
}

namespace detail {

/// Plug-in mutual information of a joint count table (natural log), clamped at 0.
inline double mutual_information(const std::vector<double>& joint, std::size_t rows, std::size_t cols, double total) {
  std::vector<double> pr(rows, 0.0), pc(cols, 0.0);
  for (std::size_t a = 0; a < rows; ++a)
    for (std::size_t b = 0; b < cols; ++b) {
      pr[a] += joint[a * cols + b];
      pc[b] += joint[a * cols + b];
    }
  double mi = 0.0;
  for (std::size_t a = 0; a < rows; ++a)
    for (std::size_t b = 0; b < cols; ++b) {
      const double n = joint[a * cols + b];
      if (n > 0.0) mi += n / total * std::log(n * total / (pr[a] * pc[b]));
    }
  return std::max(0.0, mi);
}

}  // namespace detail

inline double mutual_info_feature_label(const LabeledDataset& ds, std::size_t i) {
  if (ds.samples() == 0) throw InvalidArgument("mutual information: empty dataset");
  if (i >= ds.n_pixels) throw InvalidArgument("mutual information: pixel index out of range");
  std::vector<double> joint(2 * ds.n_classes, 0.0);
  for (std::size_t s = 0; s < ds.samples(); ++s) joint[ds.at(s, i) * ds.n_classes + ds.labels[s]] += 1.0;
  return detail::mutual_information(joint, 2, ds.n_classes, static_cast<double>(ds.samples()));
}

inline double mutual_info_pairwise(const LabeledDataset& ds, std::size_t i, std::size_t j) {
  if (ds.samples() == 0) throw InvalidArgument("mutual information: empty dataset");
  if (i >= ds.n_pixels || j >= ds.n_pixels) throw InvalidArgument("mutual information: pixel index out of range");
  std::vector<double> joint(4, 0.0);
  for (std::size_t s = 0; s < ds.samples(); ++s) joint[2 * ds.at(s, i) + ds.at(s, j)] += 1.0;
  return detail::mutual_information(joint, 2, 2, static_cast<double>(ds.samples()));
}

/// I(z_i; y) for every pixel and I(z_i; z_j) for every pair i < j.
class MiTable {
 public:
  MiTable() = default;
  MiTable(std::vector<double> feature_label, std::vector<double> pairwise_upper)
      : feature_label_(std::move(feature_label)), pairwise_(std::move(pairwise_upper)) {
    const std::size_t n = feature_label_.size();
    if (pairwise_.size() != n * (n - (n > 0)) / 2) throw InvalidArgument("MiTable: pairwise table has wrong size");
  }

  std::size_t n() const noexcept { return feature_label_.size(); }
  const std::vector<double>& feature_label() const noexcept { return feature_label_; }
  double label(std::size_t i) const { return feature_label_.at(i); }
  double pair(std::size_t i, std::size_t j) const {
    if (i == j || i >= n() || j >= n()) throw InvalidArgument("MiTable: pair index out of range");
    if (i > j) std::swap(i, j);
    return pairwise_[i * n() - i * (i + 1) / 2 + (j - i - 1)];
  }

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "i,j,value\n";
    for (std::size_t i = 0; i < n(); ++i) os << i << ",y," << feature_label_[i] << '\n';
    for (std::size_t i = 0; i < n(); ++i)
      for (std::size_t j = i + 1; j < n(); ++j) os << i << ',' << j << ',' << pair(i, j) << '\n';
    return os.str();
  }

 private:
  std::vector<double> feature_label_;
  std::vector<double> pairwise_;
};

/// Builds the full table with bit-packed pixel columns; rows of the pair
/// table are distributed over `workers` threads.
inline MiTable build_mi_table(const LabeledDataset& ds, std::size_t workers = 1) {
  const std::size_t n = ds.n_pixels, S = ds.samples();
  if (S == 0) throw InvalidArgument("mutual information: empty dataset");
  const std::size_t words = (S + 63) / 64;
  std::vector<std::uint64_t> cols(n * words, 0);
  std::vector<std::size_t> ones(n, 0);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t i = 0; i < n; ++i)
      if (ds.at(s, i)) {
        cols[i * words + s / 64] |= std::uint64_t{1} << (s % 64);
        ++ones[i];
      }
  std::vector<double> label(n);
  for (std::size_t i = 0; i < n; ++i) label[i] = mutual_info_feature_label(ds, i);
  std::vector<double> upper(n * (n - (n > 0)) / 2);
  const double total = static_cast<double>(S);
  parallel_for(n, workers, [&](std::size_t i) {
    const std::size_t base = i * n - i * (i + 1) / 2;
    std::vector<double> joint(4);
    for (std::size_t j = i + 1; j < n; ++j) {
      std::size_t both = 0;
      for (std::size_t w = 0; w < words; ++w)
        both += static_cast<std::size_t>(std::popcount(cols[i * words + w] & cols[j * words + w]));
      const double n11 = static_cast<double>(both);
      const double n10 = static_cast<double>(ones[i]) - n11, n01 = static_cast<double>(ones[j]) - n11;
      joint = {total - n11 - n10 - n01, n01, n10, n11};
      upper[base + (j - i - 1)] = detail::mutual_information(joint, 2, 2, total);
    }
  });
  return MiTable(std::move(label), std::move(upper));
}

/// E(x) = -sum_i I(z_i;y) x_i + (K-1)^{-1} sum_{i<j} I(z_i;z_j) x_i x_j, keeping
/// only pairs whose normalised coefficient reaches `edge_threshold`.
inline QuboInstance build_feature_qubo(const MiTable& mi, std::size_t k, double edge_threshold = 1e-3) {
  if (k < 2) throw InvalidArgument("build_feature_qubo: K must be at least 2");
  const std::size_t n = mi.n();
  std::vector<double> linear(n);
  for (std::size_t i = 0; i < n; ++i) linear[i] = -mi.label(i);
  std::vector<Edge> edges;
  const double scale = 1.0 / static_cast<double>(k - 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double q = mi.pair(i, j) * scale;
      if (q >= edge_threshold && q != 0.0) edges.push_back({static_cast<Index>(i), static_cast<Index>(j), q});
    }
  return QuboInstance(n, std::move(edges), std::move(linear), 0.0);
}

struct FeatureMask {
  std::vector<std::uint8_t> selected;
  std::size_t k = 0;

  static FeatureMask from_config(const SpinConfig& x) {
    FeatureMask m;
    m.selected.assign(x.bits().begin(), x.bits().end());
    m.k = x.hamming_weight();
    return m;
  }

  static FeatureMask from_indices(std::size_t n, const std::vector<std::size_t>& idx) {
    FeatureMask m;
    m.selected.assign(n, 0);
    for (auto i : idx) {
      if (i >= n) throw InvalidArgument("mask index out of range");
      if (m.selected[i]) throw InvalidArgument("mask index repeated");
      m.selected[i] = 1;
    }
    m.k = idx.size();
    return m;
  }

  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < selected.size(); ++i)
      if (selected[i]) idx.push_back(i);
    return idx;
  }

  std::string to_text() const {
    std::ostringstream os;
    for (auto i : indices()) os << i << '\n';
    return os.str();
  }
};

struct LogisticConfig {
  std::size_t iterations = 500;
  double learning_rate = 0.5;
  double l2 = 1e-4;
};

/// Multinomial logistic regression on the selected binary pixels plus a
/// bias, full-batch gradient descent from zero. Returns test accuracy.
inline double evaluate_mask(const LabeledDataset& train, const LabeledDataset& test, const FeatureMask& mask,
                            const LogisticConfig& cfg = {}) {
  const auto idx = mask.indices();
  if (idx.empty()) throw InvalidArgument("evaluate_mask: empty mask");
  if (mask.selected.size() != train.n_pixels || train.n_pixels != test.n_pixels)
    throw InvalidArgument("evaluate_mask: mask length differs from the pixel count");
  if (train.samples() == 0 || test.samples() == 0) throw InvalidArgument("evaluate_mask: empty dataset");
  const std::size_t C = std::max(train.n_classes, test.n_classes), D = idx.size() + 1, S = train.samples();
  auto features = [&](const LabeledDataset& ds) {
    std::vector<double> f(ds.samples() * D);
    for (std::size_t s = 0; s < ds.samples(); ++s) {
      for (std::size_t d = 0; d + 1 < D; ++d) f[s * D + d] = ds.at(s, idx[d]);
      f[s * D + D - 1] = 1.0;
    }
    return f;
  };
  const auto xtr = features(train), xte = features(test);
  std::vector<double> W(C * D, 0.0), grad(C * D), logits(C);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t s = 0; s < S; ++s) {
      const double* x = xtr.data() + s * D;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < C; ++c) {
        double z = 0.0;
        for (std::size_t d = 0; d < D; ++d) z += W[c * D + d] * x[d];
        logits[c] = z;
        mx = std::max(mx, z);
      }
      double norm = 0.0;
      for (auto& z : logits) norm += (z = std::exp(z - mx));
      for (std::size_t c = 0; c < C; ++c) {
        const double err = logits[c] / norm - (train.labels[s] == c ? 1.0 : 0.0);
        for (std::size_t d = 0; d < D; ++d) grad[c * D + d] += err * x[d];
      }
    }
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t d = 0; d < D; ++d) {
        double g = grad[c * D + d] / static_cast<double>(S);
        if (d + 1 < D) g += cfg.l2 * W[c * D + d];
        W[c * D + d] -= cfg.learning_rate * g;
      }
  }
  std::size_t correct = 0;
  for (std::size_t s = 0; s < test.samples(); ++s) {
    const double* x = xte.data() + s * D;
    std::size_t best = 0;
    double best_z = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) {
      double z = 0.0;
      for (std::size_t d = 0; d < D; ++d) z += W[c * D + d] * x[d];
      if (z > best_z) {
        best_z = z;
        best = c;
      }
    }
    correct += best == test.labels[s];
  }
  return static_cast<double>(correct) / static_cast<double>(test.samples());
}

/// Uniformly random K-subset of the pixels.
inline FeatureMask random_k_mask(std::size_t n, std::size_t k, Rng& rng) {
  if (k > n) throw InvalidArgument("random_k_mask: K exceeds the pixel count");
  return FeatureMask::from_config(random_feasible_config(n, k, rng));
}

/// The K pixels with the largest I(z_i; y); ties go to the lower index.
inline FeatureMask linear_terms_mask(const MiTable& mi, std::size_t k) {
  if (k > mi.n()) throw InvalidArgument("linear_terms_mask: K exceeds the pixel count");
  std::vector<std::size_t> order(mi.n());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mi.label(a) > mi.label(b); });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return FeatureMask::from_indices(mi.n(), order);
}

}  // namespace dcqmc
