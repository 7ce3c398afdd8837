#pragma once

// Greedy block partitions of the interaction graph and the crossing repair
// that makes the second partition straddle the first one's boundaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "dcqmc/errors.hpp"
#include "dcqmc/io.hpp"
#include "dcqmc/ising.hpp"
#include "dcqmc/random.hpp"

namespace dcqmc {

/// Partition index s in {1, 2} and 0-based block index m.
struct BlockId {
  int s = 1;
  int m = 0;
  auto operator<=>(const BlockId&) const = default;
  std::string to_string() const { return "s" + std::to_string(s) + "_m" + std::to_string(m); }
};

struct Block {
  BlockId id;
  std::vector<Index> vertices;  // insertion order; doubles as qubit and MADE order
  std::size_t size() const noexcept { return vertices.size(); }
};

using Partition = std::vector<Block>;

/// Splits n into round(n / target) blocks whose sizes differ by at most one.
inline std::vector<std::size_t> spread_block_sizes(std::size_t n, std::size_t target) {
  if (n == 0 || target == 0) throw InvalidArgument("spread_block_sizes: n and target must be positive");
  const std::size_t count = std::max<std::size_t>(1, (n + target / 2) / target);
  std::vector<std::size_t> sizes(count, n / count);
  for (std::size_t t = 0; t < n % count; ++t) ++sizes[t];
  return sizes;
}

/// Checks the partition property: blocks nonempty, disjoint, covering 0..n-1.
inline void validate_partition(const Partition& p, std::size_t n) {
  std::vector<std::uint8_t> seen(n, 0);
  std::size_t total = 0;
  for (const auto& b : p) {
    if (b.vertices.empty()) throw InvalidArgument("partition: empty block " + b.id.to_string());
    for (auto v : b.vertices) {
      if (v >= n) throw InvalidArgument("partition: vertex out of range in " + b.id.to_string());
      if (seen[v]++) throw InvalidArgument("partition: vertex " + std::to_string(v) + " assigned twice");
      ++total;
    }
  }
  if (total != n) throw InvalidArgument("partition: blocks do not cover every vertex");
}

/// Greedy growth: each block starts from a uniformly random unassigned seed
/// vertex and repeatedly absorbs the unassigned neighbour with the largest
/// sum of |Q_ij| to current members (ties to the lowest index). With no
/// unassigned neighbour left, a uniformly random unassigned vertex is added.
inline Partition build_partition(const QuboInstance& inst, const std::vector<std::size_t>& block_sizes,
                                 std::uint64_t seed, int s = 1) {
  const std::size_t n = inst.n();
  std::size_t total = 0;
  for (auto sz : block_sizes) {
    if (sz == 0) throw InvalidArgument("build_partition: block sizes must be positive");
    total += sz;
  }
  if (total != n)
    throw InvalidArgument("build_partition: block sizes sum to " + std::to_string(total) + ", instance has " +
                          std::to_string(n) + " vertices");
  Rng rng(seed, static_cast<std::uint64_t>(s));
  std::vector<Index> unassigned(n);
  std::iota(unassigned.begin(), unassigned.end(), Index{0});
  std::vector<std::size_t> slot(n);
  std::iota(slot.begin(), slot.end(), std::size_t{0});
  std::vector<double> score(n, 0.0);
  std::vector<std::uint8_t> touched(n, 0);

  auto take = [&](Index v) {
    // O(1) removal from the unassigned pool.
    const std::size_t pos = slot[v];
    const Index last = unassigned.back();
    unassigned[pos] = last;
    slot[last] = pos;
    unassigned.pop_back();
    slot[v] = std::numeric_limits<std::size_t>::max();
  };
  auto is_unassigned = [&](Index v) { return slot[v] != std::numeric_limits<std::size_t>::max(); };

  Partition partition;
  partition.reserve(block_sizes.size());
  for (std::size_t m = 0; m < block_sizes.size(); ++m) {
    Block block{{s, static_cast<int>(m)}, {}};
    std::vector<Index> frontier;
    auto add = [&](Index v) {
      take(v);
      block.vertices.push_back(v);
      for (const auto& nb : inst.neighbors(v)) {
        if (!is_unassigned(nb.vertex)) continue;
        if (!touched[nb.vertex]) {
          touched[nb.vertex] = 1;
          frontier.push_back(nb.vertex);
        }
        score[nb.vertex] += std::abs(nb.q);
      }
    };
    add(unassigned[uniform_index(rng, unassigned.size())]);
    while (block.vertices.size() < block_sizes[m]) {
      Index best = 0;
      double best_score = -1.0;
      for (auto v : frontier) {
        if (!is_unassigned(v)) continue;
        if (score[v] > best_score || (score[v] == best_score && v < best)) {
          best = v;
          best_score = score[v];
        }
      }
      if (best_score >= 0.0)
        add(best);
      else
        add(unassigned[uniform_index(rng, unassigned.size())]);
    }
    for (auto v : frontier) {
      touched[v] = 0;
      score[v] = 0.0;
    }
    partition.push_back(std::move(block));
  }
  return partition;
}

/// Sum of |Q_ij| over edges with both endpoints in the same block.
inline double intra_block_coupling(const QuboInstance& inst, const Partition& p) {
  std::vector<std::size_t> owner(inst.n(), 0);
  for (std::size_t m = 0; m < p.size(); ++m)
    for (auto v : p[m].vertices) owner[v] = m;
  double total = 0.0;
  for (const auto& e : inst.edges())
    if (owner[e.i] == owner[e.j]) total += std::abs(e.q);
  return total;
}

struct CrossingReport {
  std::size_t min_crossing = 0;          // min over p2 blocks of #p1 blocks met
  double mean_crossing = 0.0;
  std::vector<std::size_t> per_block;    // #p1 blocks met by each p2 block
  std::vector<std::size_t> violating;    // p2 blocks meeting a single p1 block
};

struct PartitionDiagnostics {
  bool degraded = false;      // crossing invariant not reached within the swap budget
  bool single_block = false;  // p1 has one block; the invariant is vacuous
  std::size_t swaps = 0;
};

struct PartitionPair {
  Partition p1;
  Partition p2;
  /// crossing[m2][m1] = |B_m2^(2) intersect B_m1^(1)|
  std::vector<std::vector<std::size_t>> crossing;
  PartitionDiagnostics diagnostics;

  const Partition& partition(int s) const { return s == 1 ? p1 : p2; }
  std::size_t block_count() const noexcept { return p1.size() + p2.size(); }
};

inline std::vector<std::vector<std::size_t>> crossing_matrix(const Partition& p1, const Partition& p2,
                                                             std::size_t n) {
  std::vector<std::size_t> owner1(n, 0);
  for (std::size_t m = 0; m < p1.size(); ++m)
    for (auto v : p1[m].vertices) owner1[v] = m;
  std::vector<std::vector<std::size_t>> c(p2.size(), std::vector<std::size_t>(p1.size(), 0));
  for (std::size_t m = 0; m < p2.size(); ++m)
    for (auto v : p2[m].vertices) ++c[m][owner1[v]];
  return c;
}

inline CrossingReport crossing_report(const PartitionPair& pp) {
  CrossingReport r;
  r.min_crossing = std::numeric_limits<std::size_t>::max();
  for (std::size_t m = 0; m < pp.crossing.size(); ++m) {
    const auto met = static_cast<std::size_t>(
        std::count_if(pp.crossing[m].begin(), pp.crossing[m].end(), [](std::size_t c) { return c > 0; }));
    r.per_block.push_back(met);
    r.min_crossing = std::min(r.min_crossing, met);
    r.mean_crossing += static_cast<double>(met);
    if (met < 2) r.violating.push_back(m);
  }
  if (r.per_block.empty()) r.min_crossing = 0;
  else r.mean_crossing /= static_cast<double>(r.per_block.size());
  return r;
}

/// Assembles a pair from two existing partitions and fills the crossing matrix.
inline PartitionPair make_partition_pair(Partition p1, Partition p2, std::size_t n) {
  validate_partition(p1, n);
  validate_partition(p2, n);
  for (std::size_t m = 0; m < p1.size(); ++m) p1[m].id = {1, static_cast<int>(m)};
  for (std::size_t m = 0; m < p2.size(); ++m) p2[m].id = {2, static_cast<int>(m)};
  PartitionPair pp;
  pp.crossing = crossing_matrix(p1, p2, n);
  pp.p1 = std::move(p1);
  pp.p2 = std::move(p2);
  pp.diagnostics.single_block = pp.p1.size() < 2;
  pp.diagnostics.degraded = !pp.diagnostics.single_block && !crossing_report(pp).violating.empty();
  return pp;
}

namespace detail {

// Swap-based repair. For a p2 block lying inside one p1 block, exchange one
// of its vertices with a vertex of another p2 block that sits in a different
// p1 block. Candidates are ranked by (violations left among the two touched
// blocks, preferring boundary vertices and adjacent blocks, lost intra-block
// |coupling|, vertex indices). A swap is applied only if it reduces the
// violation count; at most n swaps are made.
inline std::size_t repair_crossing(const QuboInstance& inst, const Partition& p1, Partition& p2) {
  const std::size_t n = inst.n();
  std::vector<std::size_t> owner1(n), owner2(n);
  for (std::size_t m = 0; m < p1.size(); ++m)
    for (auto v : p1[m].vertices) owner1[v] = m;
  auto refresh_owner2 = [&] {
    for (std::size_t m = 0; m < p2.size(); ++m)
      for (auto v : p2[m].vertices) owner2[v] = m;
  };
  refresh_owner2();

  auto blocks_met = [&](const std::vector<Index>& vs, Index drop, Index add) {
    std::vector<std::size_t> met;
    for (auto v : vs)
      if (v != drop) met.push_back(owner1[v]);
    met.push_back(owner1[add]);
    std::sort(met.begin(), met.end());
    return static_cast<std::size_t>(std::unique(met.begin(), met.end()) - met.begin());
  };
  auto blocks_met_now = [&](const std::vector<Index>& vs) {
    std::vector<std::size_t> met;
    for (auto v : vs) met.push_back(owner1[v]);
    std::sort(met.begin(), met.end());
    return static_cast<std::size_t>(std::unique(met.begin(), met.end()) - met.begin());
  };
  // Sum of |Q_vw| for w in block m (w != skip).
  auto coupling_to = [&](Index v, std::size_t m, Index skip) {
    double s = 0.0;
    for (const auto& nb : inst.neighbors(v))
      if (nb.vertex != skip && owner2[nb.vertex] == m) s += std::abs(nb.q);
    return s;
  };
  auto is_boundary = [&](Index v) {
    for (const auto& nb : inst.neighbors(v))
      if (owner2[nb.vertex] != owner2[v]) return true;
    return false;
  };

  std::size_t swaps = 0;
  std::vector<std::uint8_t> given_up(p2.size(), 0);
  while (swaps < n) {
    std::size_t target = p2.size();
    for (std::size_t m = 0; m < p2.size(); ++m)
      if (!given_up[m] && blocks_met_now(p2[m].vertices) < 2) {
        target = m;
        break;
      }
    if (target == p2.size()) break;
    const auto& bv = p2[target].vertices;
    using Key = std::tuple<std::size_t, int, double, Index, Index>;
    Key best{std::numeric_limits<std::size_t>::max(), 0, 0.0, 0, 0};
    std::size_t best_block = p2.size();
    for (auto u : bv) {
      const bool u_boundary = is_boundary(u);
      for (Index v = 0; v < n; ++v) {
        const std::size_t c = owner2[v];
        if (c == target || owner1[v] == owner1[u]) continue;
        const auto& cv = p2[c].vertices;
        const std::size_t before = (blocks_met_now(cv) < 2 ? 1u : 0u) + 1u;
        const std::size_t after =
            (blocks_met(bv, u, v) < 2 ? 1u : 0u) + (blocks_met(cv, v, u) < 2 ? 1u : 0u);
        if (after >= before) continue;
        const bool adjacent = coupling_to(v, target, u) > 0.0;
        const int locality = (u_boundary ? 0 : 1) + (adjacent ? 0 : 1);
        const double loss = coupling_to(u, target, u) + coupling_to(v, c, v) - coupling_to(v, target, u) -
                            coupling_to(u, c, v);
        Key key{after, locality, loss, u, v};
        if (key < best) {
          best = key;
          best_block = c;
        }
      }
    }
    if (best_block == p2.size()) {
      given_up[target] = 1;
      continue;
    }
    const Index u = std::get<3>(best), v = std::get<4>(best);
    auto& bvm = p2[target].vertices;
    auto& cvm = p2[best_block].vertices;
    *std::find(bvm.begin(), bvm.end(), u) = v;
    *std::find(cvm.begin(), cvm.end(), v) = u;
    refresh_owner2();
    ++swaps;
  }
  return swaps;
}

}  // namespace detail

/// Two greedy partitions from derived seeds; the second is repaired so each
/// of its blocks meets at least two blocks of the first. An unreachable
/// invariant is reported through diagnostics, not thrown.
inline PartitionPair build_partition_pair(const QuboInstance& inst, const std::vector<std::size_t>& sizes1,
                                          const std::vector<std::size_t>& sizes2, std::uint64_t seed) {
  Partition p1 = build_partition(inst, sizes1, derive_seed(seed, 1), 1);
  Partition p2 = build_partition(inst, sizes2, derive_seed(seed, 2), 2);
  std::size_t swaps = 0;
  if (p1.size() >= 2) swaps = detail::repair_crossing(inst, p1, p2);
  PartitionPair pp = make_partition_pair(std::move(p1), std::move(p2), inst.n());
  pp.diagnostics.swaps = swaps;
  return pp;
}

// Partition file: {"n": N, "partitions": [{"s": 1, "blocks": [[v...]...]}, {"s": 2, ...}]}

inline Json partition_pair_to_json(const PartitionPair& pp, std::size_t n) {
  Json parts = Json::array();
  for (int s : {1, 2}) {
    Json blocks = Json::array();
    for (const auto& b : pp.partition(s)) blocks.push_back(b.vertices);
    parts.push_back({{"s", s}, {"blocks", std::move(blocks)}});
  }
  return Json{{"n", n},
              {"partitions", std::move(parts)},
              {"diagnostics",
               {{"degraded", pp.diagnostics.degraded},
                {"single_block", pp.diagnostics.single_block},
                {"swaps", pp.diagnostics.swaps}}}};
}

inline PartitionPair partition_pair_from_json(const Json& j) {
  try {
    const auto n = j.at("n").get<std::size_t>();
    Partition parts[2];
    for (const auto& pj : j.at("partitions")) {
      const int s = pj.at("s").get<int>();
      if (s != 1 && s != 2) throw FormatError("partition file: s must be 1 or 2");
      for (const auto& bj : pj.at("blocks"))
        parts[s - 1].push_back({{s, static_cast<int>(parts[s - 1].size())}, bj.get<std::vector<Index>>()});
    }
    PartitionPair pp = make_partition_pair(std::move(parts[0]), std::move(parts[1]), n);
    if (j.contains("diagnostics")) pp.diagnostics.swaps = j["diagnostics"].value("swaps", std::size_t{0});
    return pp;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("partition file: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("partition file: ") + e.what());
  }
}

inline void save_partition_pair(const std::filesystem::path& path, const PartitionPair& pp, std::size_t n) {
  write_json_file(path, partition_pair_to_json(pp, n));
}

inline PartitionPair load_partition_pair(const std::filesystem::path& path) {
  return partition_pair_from_json(read_json_file(path));
}

}  // namespace dcqmc
