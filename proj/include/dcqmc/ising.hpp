#pragma once

// Problem representation: QUBO instances, their Ising form, spin
// configurations, random regular-graph instances and the exact
// fixed-weight Boltzmann enumeration used as a test oracle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcqmc/errors.hpp"
#include "dcqmc/random.hpp"

namespace dcqmc {

using Index = std::uint32_t;

/// Binary configuration x in {0,1}^n.
class SpinConfig {
 public:
  SpinConfig() = default;
  explicit SpinConfig(std::size_t n) : bits_(n, 0) {}
  explicit SpinConfig(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    for (auto b : bits_)
      if (b > 1) throw InvalidArgument("SpinConfig: bits must be 0 or 1");
  }
  SpinConfig(std::initializer_list<int> bits) {
    bits_.reserve(bits.size());
    for (int b : bits) {
      if (b != 0 && b != 1) throw InvalidArgument("SpinConfig: bits must be 0 or 1");
      bits_.push_back(static_cast<std::uint8_t>(b));
    }
  }

  std::size_t size() const noexcept { return bits_.size(); }
  std::uint8_t operator[](std::size_t i) const noexcept { return bits_[i]; }
  void set(std::size_t i, std::uint8_t v) noexcept { bits_[i] = v; }
  void swap_sites(std::size_t i, std::size_t j) noexcept { std::swap(bits_[i], bits_[j]); }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  std::size_t hamming_weight() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  /// Little-endian packing: bit i of word i/64 holds x_i.
  std::vector<std::uint64_t> pack() const {
    std::vector<std::uint64_t> words((bits_.size() + 63) / 64, 0);
    for (std::size_t i = 0; i < bits_.size(); ++i)
      if (bits_[i]) words[i / 64] |= std::uint64_t{1} << (i % 64);
    return words;
  }

  static SpinConfig unpack(std::span<const std::uint64_t> words, std::size_t n) {
    SpinConfig x(n);
    for (std::size_t i = 0; i < n; ++i) x.bits_[i] = static_cast<std::uint8_t>((words[i / 64] >> (i % 64)) & 1u);
    return x;
  }

  std::string to_string() const {
    std::string s(bits_.size(), '0');
    for (std::size_t i = 0; i < bits_.size(); ++i)
      if (bits_[i]) s[i] = '1';
    return s;
  }

  auto operator<=>(const SpinConfig&) const = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// Uniformly random configuration of length n with exactly k ones.
inline SpinConfig random_feasible_config(std::size_t n, std::size_t k, Rng& rng) {
  if (k > n) throw InvalidArgument("random_feasible_config: K exceeds n");
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  // Partial Fisher-Yates over the first k slots.
  SpinConfig x(n);
  for (std::size_t t = 0; t < k; ++t) {
    const auto j = t + static_cast<std::size_t>(uniform_index(rng, n - t));
    std::swap(idx[t], idx[j]);
    x.set(idx[t], 1);
  }
  return x;
}

struct Edge {
  Index i = 0;
  Index j = 0;
  double q = 0.0;
  bool operator==(const Edge&) const = default;
};

struct Neighbor {
  Index vertex = 0;
  double q = 0.0;
};

/// E(x) = sum_{i<j} Q_ij x_i x_j + sum_i q_i x_i + c with a sparse Q.
/// Immutable after construction; the adjacency is built once and shared by
/// every consumer.
class QuboInstance {
 public:
  QuboInstance() = default;

  /// Edges may be given in any order with either orientation; duplicate
  /// pairs and self loops are rejected, zero coefficients dropped.
  QuboInstance(std::size_t n, std::vector<Edge> edges, std::vector<double> linear, double constant = 0.0)
      : n_(n), linear_(std::move(linear)), constant_(constant) {
    if (linear_.empty()) linear_.assign(n_, 0.0);
    if (linear_.size() != n_) throw InvalidArgument("QuboInstance: linear term length differs from n");
    edges_.reserve(edges.size());
    for (auto e : edges) {
      if (e.i == e.j) throw InvalidArgument("QuboInstance: self-coupling on vertex " + std::to_string(e.i));
      if (e.i > e.j) std::swap(e.i, e.j);
      if (e.j >= n_) throw InvalidArgument("QuboInstance: edge index out of range");
      if (e.q == 0.0) continue;
      edges_.push_back(e);
    }
    std::sort(edges_.begin(), edges_.end(),
              [](const Edge& a, const Edge& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
    for (std::size_t t = 1; t < edges_.size(); ++t)
      if (edges_[t].i == edges_[t - 1].i && edges_[t].j == edges_[t - 1].j)
        throw InvalidArgument("QuboInstance: duplicate edge (" + std::to_string(edges_[t].i) + "," +
                              std::to_string(edges_[t].j) + ")");
    build_adjacency();
  }

  std::size_t n() const noexcept { return n_; }
  std::span<const Edge> edges() const noexcept { return edges_; }
  std::span<const double> linear() const noexcept { return linear_; }
  double constant() const noexcept { return constant_; }

  std::span<const Neighbor> neighbors(std::size_t v) const noexcept {
    return {adjacency_.data() + offsets_[v], adjacency_.data() + offsets_[v + 1]};
  }
  std::size_t degree(std::size_t v) const noexcept { return offsets_[v + 1] - offsets_[v]; }

  /// Q_{min(i,j),max(i,j)}, or 0 when the pair is not coupled.
  double coupling(std::size_t i, std::size_t j) const noexcept {
    auto nb = neighbors(i);
    auto it = std::lower_bound(nb.begin(), nb.end(), j,
                               [](const Neighbor& a, std::size_t v) { return a.vertex < v; });
    return (it != nb.end() && it->vertex == j) ? it->q : 0.0;
  }

  bool operator==(const QuboInstance& o) const {
    return n_ == o.n_ && edges_ == o.edges_ && linear_ == o.linear_ && constant_ == o.constant_;
  }

 private:
  void build_adjacency() {
    offsets_.assign(n_ + 1, 0);
    for (const auto& e : edges_) {
      ++offsets_[e.i + 1];
      ++offsets_[e.j + 1];
    }
    std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
    adjacency_.resize(2 * edges_.size());
    std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (const auto& e : edges_) {
      adjacency_[fill[e.i]++] = {e.j, e.q};
      adjacency_[fill[e.j]++] = {e.i, e.q};
    }
    for (std::size_t v = 0; v < n_; ++v)
      std::sort(adjacency_.begin() + static_cast<std::ptrdiff_t>(offsets_[v]),
                adjacency_.begin() + static_cast<std::ptrdiff_t>(offsets_[v + 1]),
                [](const Neighbor& a, const Neighbor& b) { return a.vertex < b.vertex; });
  }

  std::size_t n_ = 0;
  std::vector<Edge> edges_;
  std::vector<double> linear_;
  double constant_ = 0.0;
  std::vector<std::size_t> offsets_{0};
  std::vector<Neighbor> adjacency_;
};

inline double energy(const QuboInstance& inst, const SpinConfig& x) {
  if (x.size() != inst.n()) throw InvalidArgument("energy: configuration length differs from instance size");
  double e = inst.constant();
  for (std::size_t i = 0; i < inst.n(); ++i)
    if (x[i]) e += inst.linear()[i];
  for (const auto& edge : inst.edges())
    if (x[edge.i] && x[edge.j]) e += edge.q;
  return e;
}

/// E(swap(x, i, j)) - E(x) in O(deg(i) + deg(j)).
inline double energy_delta_swap(const QuboInstance& inst, const SpinConfig& x, std::size_t i, std::size_t j) {
  if (i >= inst.n() || j >= inst.n() || x.size() != inst.n())
    throw InvalidArgument("energy_delta_swap: index out of range");
  if (x[i] == x[j]) throw InvalidArgument("energy_delta_swap: sites hold equal bits");
  // Let a be the site going 1 -> 0 and b the site going 0 -> 1.
  const std::size_t a = x[i] ? i : j;
  const std::size_t b = x[i] ? j : i;
  double delta = inst.linear()[b] - inst.linear()[a];
  for (const auto& nb : inst.neighbors(a))
    if (nb.vertex != b && x[nb.vertex]) delta -= nb.q;
  for (const auto& nb : inst.neighbors(b))
    if (nb.vertex != a && x[nb.vertex]) delta += nb.q;
  return delta;
}

/// E(y) - E(x) where y agrees with x except at `sites`, whose new values are
/// `values`. `scratch` must be length n and all-zero; it is restored.
inline double energy_delta_sites(const QuboInstance& inst, const SpinConfig& x, std::span<const Index> sites,
                                 std::span<const std::uint8_t> values, std::vector<std::uint8_t>& scratch) {
  // scratch[v] = 1 + new value for v in sites.
  for (std::size_t t = 0; t < sites.size(); ++t) scratch[sites[t]] = static_cast<std::uint8_t>(1 + values[t]);
  double delta = 0.0;
  for (std::size_t t = 0; t < sites.size(); ++t) {
    const Index v = sites[t];
    const int old_v = x[v];
    const int new_v = values[t];
    if (old_v == new_v) continue;
    delta += inst.linear()[v] * (new_v - old_v);
  }
  for (std::size_t t = 0; t < sites.size(); ++t) {
    const Index v = sites[t];
    const int old_v = x[v];
    const int new_v = values[t];
    for (const auto& nb : inst.neighbors(v)) {
      const Index u = nb.vertex;
      if (scratch[u]) {
        if (u < v) continue;  // both endpoints in the set: count once
        const int new_u = scratch[u] - 1;
        delta += nb.q * (new_v * new_u - old_v * x[u]);
      } else if (x[u]) {
        delta += nb.q * (new_v - old_v);
      }
    }
  }
  for (auto v : sites) scratch[v] = 0;
  return delta;
}

/// H = sum_{i<j} J_ij s_i s_j + sum_i h_i s_i + c' with s_i = 1 - 2 x_i.
struct IsingForm {
  std::vector<Edge> couplings;  // q holds J_ij
  std::vector<double> fields;
  double constant = 0.0;
};

inline IsingForm qubo_to_ising(const QuboInstance& inst) {
  IsingForm form;
  form.fields.assign(inst.n(), 0.0);
  form.constant = inst.constant();
  for (std::size_t i = 0; i < inst.n(); ++i) {
    form.fields[i] = -0.5 * inst.linear()[i];
    form.constant += 0.5 * inst.linear()[i];
  }
  for (const auto& e : inst.edges()) {
    form.couplings.push_back({e.i, e.j, 0.25 * e.q});
    form.fields[e.i] -= 0.25 * e.q;
    form.fields[e.j] -= 0.25 * e.q;
    form.constant += 0.25 * e.q;
  }
  return form;
}

inline double ising_energy(const IsingForm& form, const SpinConfig& x) {
  if (x.size() != form.fields.size()) throw InvalidArgument("ising_energy: length mismatch");
  auto spin = [&](std::size_t i) { return 1.0 - 2.0 * x[i]; };
  double e = form.constant;
  for (std::size_t i = 0; i < form.fields.size(); ++i) e += form.fields[i] * spin(i);
  for (const auto& c : form.couplings) e += c.q * spin(c.i) * spin(c.j);
  return e;
}

/// Random simple `degree`-regular graph on n vertices from the pairing model
/// (full restart on loops or multi-edges), couplings iid N(0,1), no linear
/// terms and zero constant.
inline QuboInstance gen_regular_instance(std::size_t n, std::size_t degree, std::uint64_t seed) {
  if (degree >= n || (n * degree) % 2 != 0)
    throw InvalidArgument("gen_regular_instance: no simple " + std::to_string(degree) + "-regular graph on " +
                          std::to_string(n) + " vertices");
  Rng rng(seed, 0);
  std::vector<Index> points(n * degree);
  for (std::size_t p = 0; p < points.size(); ++p) points[p] = static_cast<Index>(p / degree);
  std::vector<std::pair<Index, Index>> pairs;
  constexpr int kMaxAttempts = 100000;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxAttempts) throw ResourceLimit("gen_regular_instance: pairing model did not yield a simple graph");
    shuffle(points, rng);
    pairs.clear();
    bool simple = true;
    for (std::size_t p = 0; p < points.size(); p += 2) {
      Index a = points[p], b = points[p + 1];
      if (a == b) {
        simple = false;
        break;
      }
      if (a > b) std::swap(a, b);
      pairs.emplace_back(a, b);
    }
    if (!simple) continue;
    std::sort(pairs.begin(), pairs.end());
    if (std::adjacent_find(pairs.begin(), pairs.end()) != pairs.end()) continue;
    break;
  }
  std::vector<Edge> edges;
  edges.reserve(pairs.size());
  for (auto [a, b] : pairs) {
    double q = standard_normal(rng);
    while (q == 0.0) q = standard_normal(rng);
    edges.push_back({a, b, q});
  }
  return QuboInstance(n, std::move(edges), std::vector<double>(n, 0.0), 0.0);
}

/// Exact pi_K over Omega_K, in lexicographic order of the packed index.
struct ConstrainedDistribution {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::uint64_t> states;  // bit i of the key is x_i (n <= 64)
  std::vector<double> energies;
  std::vector<double> probabilities;

  std::size_t size() const noexcept { return states.size(); }

  /// Position of `key` in `states`, or size() when absent.
  std::size_t find(std::uint64_t key) const noexcept {
    auto it = std::lower_bound(states.begin(), states.end(), key);
    return (it != states.end() && *it == key) ? static_cast<std::size_t>(it - states.begin()) : states.size();
  }
};

inline double binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (std::size_t t = 1; t <= k; ++t) r = r * static_cast<double>(n - k + t) / static_cast<double>(t);
  return r;
}

inline std::uint64_t pack_key(const SpinConfig& x) {
  std::uint64_t key = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i]) key |= std::uint64_t{1} << i;
  return key;
}

inline SpinConfig unpack_key(std::uint64_t key, std::size_t n) {
  SpinConfig x(n);
  for (std::size_t i = 0; i < n; ++i) x.set(i, static_cast<std::uint8_t>((key >> i) & 1u));
  return x;
}

inline ConstrainedDistribution enumerate_constrained_boltzmann(const QuboInstance& inst, std::size_t k, double beta,
                                                               double cap = 2e6) {
  const std::size_t n = inst.n();
  if (k > n) throw InvalidArgument("enumerate_constrained_boltzmann: K exceeds n");
  if (n > 63) throw ResourceLimit("enumerate_constrained_boltzmann: n > 63 not supported");
  if (binomial(n, k) > cap)
    throw ResourceLimit("enumerate_constrained_boltzmann: C(n,K) exceeds the enumeration cap");
  ConstrainedDistribution dist;
  dist.n = n;
  dist.k = k;
  // Gosper's hack walks all weight-k words in increasing order.
  std::uint64_t word = (k == 0) ? 0 : ((std::uint64_t{1} << k) - 1);
  const std::uint64_t limit = std::uint64_t{1} << n;
  while (word < limit) {
    dist.states.push_back(word);
    dist.energies.push_back(energy(inst, unpack_key(word, n)));
    if (k == 0) break;
    const std::uint64_t c = word & (0 - word);
    const std::uint64_t r = word + c;
    word = (((r ^ word) >> 2) / c) | r;
  }
  const double e_min = *std::min_element(dist.energies.begin(), dist.energies.end());
  dist.probabilities.resize(dist.states.size());
  double z = 0.0;
  for (std::size_t t = 0; t < dist.states.size(); ++t) {
    dist.probabilities[t] = std::exp(-beta * (dist.energies[t] - e_min));
    z += dist.probabilities[t];
  }
  for (auto& p : dist.probabilities) p /= z;
  return dist;
}

}  // namespace dcqmc
