#pragma once

// Conditional masked autoregressive density estimator over a block's bits,
// conditioned on the block Hamming weight k. The weight enters every hidden
// layer as a one-hot vector through an unmasked context matrix.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dcqmc/errors.hpp"
#include "dcqmc/io.hpp"
#include "dcqmc/partition.hpp"
#include "dcqmc/qaoa.hpp"
#include "dcqmc/random.hpp"

namespace dcqmc {

struct TrainConfig {
  std::vector<std::size_t> hidden_widths;  // empty: two layers of 4|B|
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 40;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;

  void validate() const {
    if (!(learning_rate > 0.0) || batch_size == 0 || epochs == 0)
      throw InvalidArgument("TrainConfig: learning rate, batch size and epochs must be positive");
    for (auto w : hidden_widths)
      if (w == 0) throw InvalidArgument("TrainConfig: hidden widths must be positive");
    if (!(validation_fraction >= 0.0 && validation_fraction <= 0.5))
      throw InvalidArgument("TrainConfig: validation fraction must lie in [0, 0.5]");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("TrainConfig: momentum must lie in [0, 1)");
  }

  std::vector<std::size_t> widths_for(std::size_t block_size) const {
    if (!hidden_widths.empty()) return hidden_widths;
    return {4 * block_size, 4 * block_size};
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_ll = 0.0;  // mean log-likelihood per sample after the epoch
  double val_ll = 0.0;    // NaN when there is no validation split
};

struct TrainingReport {
  std::vector<EpochStats> epochs;

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,train_ll,val_ll\n";
    for (const auto& e : epochs) os << e.epoch << ',' << e.train_ll << ',' << e.val_ll << '\n';
    return os.str();
  }
};

inline constexpr double kProbClamp = 1e-12;

class ConditionalMadeModel {
 public:
  ConditionalMadeModel() = default;

  /// Degrees: input slot t has degree t+1, hidden units uniform in
  /// [0, |B|-1] (degree 0 units see only the context), output slot t has
  /// degree t+1 and connects strictly to lower-degree units.
  static ConditionalMadeModel build(std::size_t block_size, const std::vector<std::size_t>& hidden_widths,
                                    std::uint64_t seed, BlockId id = {}) {
    if (block_size == 0) throw InvalidArgument("ConditionalMadeModel: block size must be positive");
    if (hidden_widths.empty()) throw InvalidArgument("ConditionalMadeModel: need at least one hidden layer");
    ConditionalMadeModel m;
    m.id_ = id;
    m.block_size_ = block_size;
    m.ordering_.resize(block_size);
    std::iota(m.ordering_.begin(), m.ordering_.end(), Index{0});
    Rng rng(seed, 3);
    m.hidden_degrees_.resize(hidden_widths.size());
    for (std::size_t l = 0; l < hidden_widths.size(); ++l) {
      m.hidden_degrees_[l].resize(hidden_widths[l]);
      for (auto& d : m.hidden_degrees_[l]) d = static_cast<std::uint32_t>(uniform_index(rng, block_size));
    }
    m.layout();
    m.build_masks();
    for (auto& layer : m.layers_) {
      const double limit = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
      for (std::size_t t = 0; t < layer.in * layer.out; ++t) {
        const double w = uniform(rng, -limit, limit);
        m.params_[layer.weight + t] = layer_mask(m, layer)[t] ? w : 0.0;
      }
      if (layer.hidden) {
        const double climit = std::sqrt(6.0 / static_cast<double>(m.context_dim() + layer.out));
        for (std::size_t t = 0; t < layer.out * m.context_dim(); ++t) m.params_[layer.context + t] = uniform(rng, -climit, climit);
      }
    }
    return m;
  }

  static ConditionalMadeModel build(std::size_t block_size, const TrainConfig& cfg, std::uint64_t seed, BlockId id = {}) {
    return build(block_size, cfg.widths_for(block_size), seed, id);
  }

  BlockId block_id() const noexcept { return id_; }
  std::size_t block_size() const noexcept { return block_size_; }
  std::size_t context_dim() const noexcept { return block_size_ + 1; }
  const std::vector<Index>& ordering() const noexcept { return ordering_; }
  std::vector<std::size_t> hidden_widths() const {
    std::vector<std::size_t> w;
    for (const auto& d : hidden_degrees_) w.push_back(d.size());
    return w;
  }
  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  /// Sets every parameter to zero; all conditionals become Bernoulli(1/2).
  void zero_parameters() { std::fill(params_.begin(), params_.end(), 0.0); }

  void check_context(std::size_t k) const {
    if (k > block_size_)
      throw InvalidArgument("ConditionalMadeModel: context k=" + std::to_string(k) + " outside [0, " +
                            std::to_string(block_size_) + "]");
  }

  /// Output logits for every ordering position, given x in block-variable order.
  std::vector<double> logits(std::span<const std::uint8_t> x, std::size_t k) const {
    check_input(x, k);
    Workspace& ws = workspace();
    forward(x, k, ws);
    return ws.act.back();
  }

  /// log q(x | k), with each conditional clamped to [1e-12, 1 - 1e-12].
  double log_prob(std::span<const std::uint8_t> x, std::size_t k) const {
    check_input(x, k);
    Workspace& ws = workspace();
    forward(x, k, ws);
    return output_log_prob(x, ws);
  }

  double log_prob_state(std::uint32_t z, std::size_t k) const {
    std::vector<std::uint8_t> x(block_size_);
    for (std::size_t t = 0; t < block_size_; ++t) x[t] = static_cast<std::uint8_t>((z >> t) & 1u);
    return log_prob(x, k);
  }

  struct Draw {
    std::vector<std::uint8_t> bits;
    double log_prob = 0.0;
  };

  /// Ancestral sampling in `ordering`. The returned log-probability comes
  /// from log_prob() on the drawn bits.
  Draw sample(std::size_t k, Rng& rng) const {
    check_context(k);
    Workspace& ws = workspace();
    Draw d{std::vector<std::uint8_t>(block_size_, 0), 0.0};
    for (std::size_t t = 0; t < block_size_; ++t) {
      forward(d.bits, k, ws);
      const double p = clamp_prob(sigmoid(ws.act.back()[t]));
      d.bits[ordering_[t]] = uniform01(rng) < p ? 1 : 0;
    }
    d.log_prob = log_prob(d.bits, k);
    return d;
  }

  /// Adds d log q(x|k) / d theta into `grad` (length parameter_count()) and
  /// returns log q(x|k). Clamping is ignored in the derivative.
  double accumulate_gradient(std::span<const std::uint8_t> x, std::size_t k, std::span<double> grad) const {
    check_input(x, k);
    if (grad.size() != params_.size()) throw InvalidArgument("accumulate_gradient: gradient length mismatch");
    Workspace& ws = workspace();
    forward(x, k, ws);
    const double lp = output_log_prob(x, ws);
    const std::size_t L = layers_.size();
    // delta for the output layer pre-activation
    std::vector<double>& delta = ws.delta;
    delta.assign(layers_.back().out, 0.0);
    for (std::size_t t = 0; t < block_size_; ++t) delta[t] = x[ordering_[t]] - sigmoid(ws.act.back()[t]);
    for (std::size_t li = L; li-- > 0;) {
      const Layer& layer = layers_[li];
      const std::vector<double>& input = ws.act[li];
      const auto& mask = layer_mask(*this, layer);
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        grad[layer.bias + o] += d;
        double* g = grad.data() + layer.weight + o * layer.in;
        const std::uint8_t* mrow = mask.data() + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i)
          if (mrow[i]) g[i] += d * input[i];
        if (layer.hidden) grad[layer.context + o * context_dim() + k] += d;
      }
      if (li == 0) break;
      // back through the weights and the ReLU of the layer below
      std::vector<double>& below = ws.delta_below;
      below.assign(layer.in, 0.0);
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        const double* w = params_.data() + layer.weight + o * layer.in;
        const std::uint8_t* mrow = mask.data() + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i)
          if (mrow[i]) below[i] += w[i] * d;
      }
      for (std::size_t i = 0; i < layer.in; ++i)
        if (ws.pre[li - 1][i] <= 0.0) below[i] = 0.0;
      std::swap(delta, below);
    }
    return lp;
  }

  /// Structural mask of each weighted layer, out x in row-major.
  const std::vector<std::vector<std::uint8_t>>& masks() const noexcept { return masks_; }

  std::vector<std::uint8_t> encode() const;
  static ConditionalMadeModel decode(std::span<const std::uint8_t> bytes, const std::string& name = "model");

 private:
  struct Layer {
    std::size_t in = 0, out = 0;
    std::size_t weight = 0, bias = 0, context = 0;  // offsets into params_
    bool hidden = false;
    std::size_t index = 0;
  };

  struct Workspace {
    std::vector<std::vector<double>> act;  // act[0] = input slots, act[l+1] = output of layer l
    std::vector<std::vector<double>> pre;  // pre-activations of hidden layers
    std::vector<double> delta, delta_below;
  };

  static Workspace& workspace() {
    thread_local Workspace ws;
    return ws;
  }

  static const std::vector<std::uint8_t>& layer_mask(const ConditionalMadeModel& m, const Layer& layer) {
    return m.masks_[layer.index];
  }

  static double sigmoid(double s) { return s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s)); }
  static double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

  void check_input(std::span<const std::uint8_t> x, std::size_t k) const {
    if (x.size() != block_size_) throw InvalidArgument("ConditionalMadeModel: input length differs from block size");
    check_context(k);
  }

  void layout() {
    layers_.clear();
    std::size_t offset = 0;
    std::size_t in = block_size_;
    const std::size_t L = hidden_degrees_.size() + 1;
    for (std::size_t l = 0; l < L; ++l) {
      Layer layer;
      layer.index = l;
      layer.in = in;
      layer.hidden = l + 1 < L;
      layer.out = layer.hidden ? hidden_degrees_[l].size() : block_size_;
      layer.weight = offset;
      offset += layer.in * layer.out;
      layer.bias = offset;
      offset += layer.out;
      if (layer.hidden) {
        layer.context = offset;
        offset += layer.out * context_dim();
      }
      layers_.push_back(layer);
      in = layer.out;
    }
    params_.assign(offset, 0.0);
  }

  void build_masks() {
    masks_.clear();
    std::vector<std::uint32_t> prev(block_size_);
    std::iota(prev.begin(), prev.end(), 1u);
    for (const auto& layer : layers_) {
      std::vector<std::uint32_t> cur;
      if (layer.hidden) {
        cur = hidden_degrees_[layer.index];
      } else {
        cur.resize(block_size_);
        std::iota(cur.begin(), cur.end(), 1u);
      }
      std::vector<std::uint8_t> mask(layer.in * layer.out);
      for (std::size_t o = 0; o < layer.out; ++o)
        for (std::size_t i = 0; i < layer.in; ++i)
          mask[o * layer.in + i] = layer.hidden ? (cur[o] >= prev[i]) : (cur[o] > prev[i]);
      masks_.push_back(std::move(mask));
      prev = std::move(cur);
    }
  }

  void forward(std::span<const std::uint8_t> x, std::size_t k, Workspace& ws) const {
    const std::size_t L = layers_.size();
    ws.act.resize(L + 1);
    ws.pre.resize(L);
    ws.act[0].resize(block_size_);
    for (std::size_t t = 0; t < block_size_; ++t) ws.act[0][t] = x[ordering_[t]];
    for (std::size_t l = 0; l < L; ++l) {
      const Layer& layer = layers_[l];
      const std::vector<double>& input = ws.act[l];
      std::vector<double>& out = ws.act[l + 1];
      out.resize(layer.out);
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double* w = params_.data() + layer.weight + o * layer.in;
        const std::uint8_t* mrow = masks_[layer.index].data() + o * layer.in;
        double s = params_[layer.bias + o];
        for (std::size_t i = 0; i < layer.in; ++i)
          if (mrow[i]) s += w[i] * input[i];
        if (layer.hidden) s += params_[layer.context + o * context_dim() + k];
        out[o] = s;
      }
      if (layer.hidden) {
        ws.pre[l] = out;
        for (auto& v : out) v = std::max(v, 0.0);
      }
    }
  }

  double output_log_prob(std::span<const std::uint8_t> x, const Workspace& ws) const {
    double lp = 0.0;
    for (std::size_t t = 0; t < block_size_; ++t) {
      const double p = clamp_prob(sigmoid(ws.act.back()[t]));
      lp += x[ordering_[t]] ? std::log(p) : std::log1p(-p);
    }
    return lp;
  }

  BlockId id_;
  std::size_t block_size_ = 0;
  std::vector<Index> ordering_;
  std::vector<std::vector<std::uint32_t>> hidden_degrees_;
  std::vector<Layer> layers_;
  std::vector<std::vector<std::uint8_t>> masks_;
  std::vector<double> params_;
};

// Model binary layout (little endian):
//   "DCQM" u32 version=1 i32 s i32 m u32 |B| u32[|B|] ordering u32 context_dim
//   u32 n_hidden, per hidden layer: u32 width, u32[width] degrees
//   per weighted layer: u8[out*in] mask
//   u64 n_params f64[n_params]   (weights, bias, context per layer, in layer order)

inline std::vector<std::uint8_t> ConditionalMadeModel::encode() const {
  BinaryWriter w;
  w.put_magic("DCQM");
  w.put<std::uint32_t>(1);
  w.put<std::int32_t>(id_.s);
  w.put<std::int32_t>(id_.m);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(block_size_));
  w.put_span<Index>(ordering_);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(context_dim()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(hidden_degrees_.size()));
  for (const auto& d : hidden_degrees_) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(d.size()));
    w.put_span<std::uint32_t>(d);
  }
  for (const auto& m : masks_) w.put_bytes(m);
  w.put<std::uint64_t>(params_.size());
  w.put_span<double>(params_);
  return w.bytes();
}

inline ConditionalMadeModel ConditionalMadeModel::decode(std::span<const std::uint8_t> bytes, const std::string& name) {
  BinaryReader r(bytes, name);
  r.expect_magic("DCQM");
  if (const auto version = r.get<std::uint32_t>(); version != 1)
    throw FormatError(name + ": unsupported model version " + std::to_string(version), r.position());
  ConditionalMadeModel m;
  m.id_.s = r.get<std::int32_t>();
  m.id_.m = r.get<std::int32_t>();
  m.block_size_ = r.get<std::uint32_t>();
  if (m.block_size_ == 0 || m.block_size_ > 64) throw FormatError(name + ": bad block size", r.position());
  m.ordering_ = r.get_vector<Index>(m.block_size_);
  {
    auto sorted = m.ordering_;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t t = 0; t < sorted.size(); ++t)
      if (sorted[t] != t) throw FormatError(name + ": ordering is not a permutation", r.position());
  }
  if (r.get<std::uint32_t>() != m.context_dim()) throw FormatError(name + ": context dimension mismatch", r.position());
  const auto n_hidden = r.get<std::uint32_t>();
  if (n_hidden == 0 || n_hidden > 64) throw FormatError(name + ": bad hidden layer count", r.position());
  m.hidden_degrees_.resize(n_hidden);
  for (auto& d : m.hidden_degrees_) {
    d = r.get_vector<std::uint32_t>(r.get<std::uint32_t>());
    for (auto deg : d)
      if (deg >= m.block_size_) throw FormatError(name + ": hidden degree out of range", r.position());
  }
  m.layout();
  m.build_masks();
  for (const auto& expected : std::vector<std::vector<std::uint8_t>>(m.masks_)) {
    const auto pos = r.position();
    if (r.get_vector<std::uint8_t>(expected.size()) != expected)
      throw FormatError(name + ": stored mask disagrees with degrees", pos);
  }
  const auto n_params = r.get<std::uint64_t>();
  if (n_params != m.params_.size()) throw FormatError(name + ": parameter count mismatch", r.position());
  m.params_ = r.get_vector<double>(n_params);
  if (!r.at_end()) throw FormatError(name + ": trailing bytes", r.position());
  return m;
}

inline void save_model(const std::filesystem::path& path, const ConditionalMadeModel& m) { write_file(path, m.encode()); }

inline ConditionalMadeModel load_model(const std::filesystem::path& path) {
  const auto bytes = read_binary_file(path);
  return ConditionalMadeModel::decode(bytes, path.string());
}

/// Mean log q(x|k) over a subset of the sample set.
inline double mean_log_likelihood(const ConditionalMadeModel& model, const BlockSampleSet& data,
                                  std::span<const std::size_t> indices) {
  if (indices.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (auto n : indices) total += model.log_prob(data.bits(n), data.weights[n]);
  return total / static_cast<double>(indices.size());
}

/// Maximum likelihood by mini-batch gradient ascent with momentum. The
/// validation split, the epoch shuffles and therefore the result are fixed by
/// cfg.seed.
inline TrainingReport train(ConditionalMadeModel& model, const BlockSampleSet& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw InvalidArgument("train: empty dataset");
  data.validate();
  if (data.block_size != model.block_size()) throw InvalidArgument("train: sample width differs from model block size");
  Rng rng(cfg.seed, 5);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, rng);
  auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(data.size())));
  if (n_val >= data.size()) n_val = data.size() - 1;
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> tr(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  std::vector<double> grad(model.parameter_count()), velocity(model.parameter_count(), 0.0);
  auto params = model.parameters();
  std::vector<std::uint8_t> bits(data.block_size);
  TrainingReport report;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(tr, rng);
    for (std::size_t start = 0; start < tr.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(tr.size(), start + cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t n = tr[b];
        for (std::size_t t = 0; t < data.block_size; ++t) bits[t] = static_cast<std::uint8_t>((data.states[n] >> t) & 1u);
        model.accumulate_gradient(bits, data.weights[n], grad);
      }
      const double scale = cfg.learning_rate / static_cast<double>(stop - start);
      for (std::size_t p = 0; p < params.size(); ++p) {
        velocity[p] = cfg.momentum * velocity[p] + scale * grad[p];
        params[p] += velocity[p];
      }
    }
    report.epochs.push_back({epoch, mean_log_likelihood(model, data, tr), mean_log_likelihood(model, data, val)});
  }
  return report;
}

}  // namespace dcqmc
