#pragma once

// Metropolis-Hastings over the fixed-weight set Omega_K with three proposal
// kernels: block surrogate (conditional MADE per block), global Kawasaki and
// local Kawasaki.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dcqmc/errors.hpp"
#include "dcqmc/io.hpp"
#include "dcqmc/ising.hpp"
#include "dcqmc/made.hpp"
#include "dcqmc/partition.hpp"
#include "dcqmc/random.hpp"

namespace dcqmc {

enum class KernelKind { BlockSurrogate, GlobalKawasaki, LocalKawasaki };

inline std::string kernel_name(KernelKind k) {
  switch (k) {
    case KernelKind::BlockSurrogate: return "block-surrogate";
    case KernelKind::GlobalKawasaki: return "global-kawasaki";
    case KernelKind::LocalKawasaki: return "local-kawasaki";
  }
  return "unknown";
}

inline KernelKind parse_kernel(const std::string& name) {
  if (name == "block-surrogate") return KernelKind::BlockSurrogate;
  if (name == "global-kawasaki") return KernelKind::GlobalKawasaki;
  if (name == "local-kawasaki") return KernelKind::LocalKawasaki;
  throw ConfigurationError("unknown kernel '" + name + "'");
}

struct ChainState {
  SpinConfig x;
  double energy = 0.0;     // cached E(x)
  std::size_t weight = 0;  // cached popcount(x) == K
};

inline ChainState make_chain_state(const QuboInstance& inst, SpinConfig x) {
  ChainState s;
  s.energy = energy(inst, x);
  s.weight = x.hamming_weight();
  s.x = std::move(x);
  return s;
}

using ModelMap = std::map<BlockId, std::shared_ptr<const ConditionalMadeModel>>;

struct KernelConfig {
  KernelKind kind = KernelKind::GlobalKawasaki;
  double beta_pi = 0.5;
  std::shared_ptr<const PartitionPair> partitions;  // block surrogate only
  ModelMap models;                                  // block surrogate only

  void validate(const QuboInstance& inst, std::size_t k) const {
    if (!std::isfinite(beta_pi)) throw ConfigurationError("kernel: beta_pi must be finite");
    switch (kind) {
      case KernelKind::BlockSurrogate:
        if (!partitions) throw ConfigurationError("block-surrogate kernel needs a partition pair");
        for (int s : {1, 2})
          for (const auto& b : partitions->partition(s)) {
            auto it = models.find(b.id);
            if (it == models.end() || !it->second)
              throw ConfigurationError("block-surrogate kernel: no model for block " + b.id.to_string());
            if (it->second->block_size() != b.size())
              throw ConfigurationError("block-surrogate kernel: model size differs for block " + b.id.to_string());
          }
        break;
      case KernelKind::GlobalKawasaki:
        if (k == 0 || k >= inst.n()) throw ConfigurationError("global Kawasaki needs 0 < K < N");
        break;
      case KernelKind::LocalKawasaki:
        if (inst.edges().empty()) throw ConfigurationError("local Kawasaki needs at least one edge");
        break;
    }
  }
};

struct KernelDetail {
  enum class Kind : std::uint8_t { None, Block, Pair, NullMove, WeightMismatch };
  Kind kind = Kind::None;
  std::int32_t a = -1;  // block: s; pair: i
  std::int32_t b = -1;  // block: m; pair: j

  std::string to_string() const {
    switch (kind) {
      case Kind::None: return "";
      case Kind::Block: return "block:s" + std::to_string(a) + "_m" + std::to_string(b);
      case Kind::WeightMismatch: return "weight-mismatch:s" + std::to_string(a) + "_m" + std::to_string(b);
      case Kind::Pair: return "pair:" + std::to_string(a) + "-" + std::to_string(b);
      case Kind::NullMove: return a >= 0 ? "null:" + std::to_string(a) + "-" + std::to_string(b) : "null";
    }
    return "";
  }
};

/// Proposed candidate y, stored as the sites where it differs from x.
struct Move {
  std::vector<Index> sites;
  std::vector<std::uint8_t> values;
  double delta_energy = 0.0;  // E(y) - E(x)
  double log_q_fwd = 0.0;     // log q(y | x); zero for symmetric kernels
  double log_q_rev = 0.0;     // log q(x | y)
  KernelDetail detail;

  bool is_null() const noexcept { return detail.kind == KernelDetail::Kind::NullMove; }
  bool is_weight_mismatch() const noexcept { return detail.kind == KernelDetail::Kind::WeightMismatch; }
};

inline SpinConfig apply_move(SpinConfig x, const Move& mv) {
  for (std::size_t t = 0; t < mv.sites.size(); ++t) x.set(mv.sites[t], mv.values[t]);
  return x;
}

struct TransitionRecord {
  std::uint64_t step = 0;
  double proposed_energy = 0.0;
  bool accepted = false;
  KernelDetail detail;
  double acceptance_prob = 0.0;
};

/// Reusable per-chain buffers.
struct ProposalScratch {
  std::vector<std::uint8_t> membership;
  std::vector<std::uint8_t> block_bits;
  explicit ProposalScratch(std::size_t n = 0) : membership(n, 0) {}
};

inline Move swap_move(const QuboInstance& inst, const SpinConfig& x, Index i, Index j) {
  Move mv;
  mv.sites = {i, j};
  mv.values = {x[j], x[i]};
  mv.delta_energy = energy_delta_swap(inst, x, i, j);
  mv.detail = {KernelDetail::Kind::Pair, static_cast<std::int32_t>(i), static_cast<std::int32_t>(j)};
  return mv;
}

/// i uniform over the ones, j uniform over the zeros.
inline Move propose_global_kawasaki(const ChainState& state, const QuboInstance& inst, Rng& rng) {
  const std::size_t n = state.x.size();
  if (state.weight == 0 || state.weight >= n) throw ConfigurationError("global Kawasaki: no valid move when K is 0 or N");
  // Rejection draws are uniform over each class.
  Index i, j;
  do i = static_cast<Index>(uniform_index(rng, n));
  while (!state.x[i]);
  do j = static_cast<Index>(uniform_index(rng, n));
  while (state.x[j]);
  return swap_move(inst, state.x, i, j);
}

/// Uniform edge; swap when the endpoint bits differ, null move otherwise.
inline Move propose_local_kawasaki(const ChainState& state, const QuboInstance& inst, Rng& rng) {
  const auto edges = inst.edges();
  if (edges.empty()) throw ConfigurationError("local Kawasaki: instance has no edges");
  const auto& e = edges[uniform_index(rng, edges.size())];
  if (state.x[e.i] == state.x[e.j]) {
    Move mv;
    mv.detail = {KernelDetail::Kind::NullMove, static_cast<std::int32_t>(e.i), static_cast<std::int32_t>(e.j)};
    return mv;
  }
  return swap_move(inst, state.x, e.i, e.j);
}

/// Picks s and then m uniformly, conditions the block's model on
/// k_B = K - sum_{i not in B} x_i, and draws x'_B. A draw of the wrong weight
/// comes back flagged as a weight mismatch.
inline Move propose_block_surrogate(const ChainState& state, const QuboInstance& inst, const KernelConfig& cfg,
                                    std::size_t k_total, Rng& rng, ProposalScratch& scratch) {
  if (!cfg.partitions) throw ConfigurationError("block-surrogate kernel needs a partition pair");
  const int s = uniform_index(rng, 2) == 0 ? 1 : 2;
  const Partition& part = cfg.partitions->partition(s);
  const Block& block = part[uniform_index(rng, part.size())];
  auto it = cfg.models.find(block.id);
  if (it == cfg.models.end() || !it->second)
    throw ConfigurationError("block-surrogate kernel: no model for block " + block.id.to_string());
  const ConditionalMadeModel& model = *it->second;

  auto& xb = scratch.block_bits;
  xb.resize(block.size());
  std::size_t inside = 0;
  for (std::size_t t = 0; t < block.size(); ++t) {
    xb[t] = state.x[block.vertices[t]];
    inside += xb[t];
  }
  const std::size_t outside = state.weight - inside;
  const std::size_t k_block = k_total - outside;

  Move mv;
  mv.detail = {KernelDetail::Kind::Block, block.id.s, block.id.m};
  auto draw = model.sample(k_block, rng);
  std::size_t drawn_weight = 0;
  for (auto b : draw.bits) drawn_weight += b;
  mv.log_q_fwd = draw.log_prob;
  if (drawn_weight != k_block) {
    mv.detail.kind = KernelDetail::Kind::WeightMismatch;
    return mv;
  }
  mv.log_q_rev = model.log_prob(xb, k_block);
  mv.sites.assign(block.vertices.begin(), block.vertices.end());
  mv.values = std::move(draw.bits);
  if (scratch.membership.size() != inst.n()) scratch.membership.assign(inst.n(), 0);
  mv.delta_energy = energy_delta_sites(inst, state.x, mv.sites, mv.values, scratch.membership);
  return mv;
}

/// alpha = min(1, exp(-beta dE + log q(x|y) - log q(y|x))); accept iff
/// u <= alpha. Null moves are accepted self-transitions and weight
/// mismatches immediate rejections; neither consumes a uniform.
inline TransitionRecord accept(ChainState& state, const Move& mv, double beta_pi, Rng& rng, std::uint64_t step = 0) {
  TransitionRecord rec;
  rec.step = step;
  rec.detail = mv.detail;
  if (mv.is_null()) {
    rec.proposed_energy = state.energy;
    rec.accepted = true;
    rec.acceptance_prob = 1.0;
    return rec;
  }
  if (mv.is_weight_mismatch()) {
    rec.proposed_energy = std::numeric_limits<double>::quiet_NaN();
    rec.accepted = false;
    rec.acceptance_prob = 0.0;
    return rec;
  }
  const double log_ratio = -beta_pi * mv.delta_energy + mv.log_q_rev - mv.log_q_fwd;
  if (std::isnan(log_ratio) || !std::isfinite(mv.delta_energy) || !std::isfinite(mv.log_q_fwd) ||
      !std::isfinite(mv.log_q_rev))
    throw InternalError("accept: non-finite acceptance inputs");
  const double alpha = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
  rec.proposed_energy = state.energy + mv.delta_energy;
  rec.acceptance_prob = alpha;
  rec.accepted = uniform01(rng) <= alpha;
  if (rec.accepted) {
    for (std::size_t t = 0; t < mv.sites.size(); ++t) state.x.set(mv.sites[t], mv.values[t]);
    state.energy += mv.delta_energy;
  }
  return rec;
}

/// Configurations stored as packed 64-bit words, one row per snapshot.
class PackedConfigs {
 public:
  PackedConfigs() = default;
  explicit PackedConfigs(std::size_t n) : n_(n), stride_((n + 63) / 64) {}

  void push_back(const SpinConfig& x) {
    for (std::size_t w = 0; w < stride_; ++w) {
      std::uint64_t word = 0;
      for (std::size_t b = 0; b < 64 && w * 64 + b < n_; ++b)
        if (x[w * 64 + b]) word |= std::uint64_t{1} << b;
      words_.push_back(word);
    }
  }

  std::size_t n() const noexcept { return n_; }
  std::size_t size() const noexcept { return stride_ ? words_.size() / stride_ : 0; }
  std::size_t stride() const noexcept { return stride_; }
  std::span<const std::uint64_t> row(std::size_t t) const { return {words_.data() + t * stride_, stride_}; }
  SpinConfig at(std::size_t t) const { return SpinConfig::unpack(row(t), n_); }
  std::uint64_t key(std::size_t t) const { return words_[t * stride_]; }  // n <= 64
  const std::vector<std::uint64_t>& words() const noexcept { return words_; }
  std::vector<std::uint64_t>& words() noexcept { return words_; }

 private:
  std::size_t n_ = 0;
  std::size_t stride_ = 0;
  std::vector<std::uint64_t> words_;
};

struct ChainTrace {
  std::size_t n = 0;
  std::size_t k = 0;
  std::size_t thin = 1;
  std::uint64_t steps = 0;
  std::string kernel;
  PackedConfigs configs;               // x at t = 0, thin, 2 thin, ...
  std::vector<double> energies;        // E(x^(t)) for t = 0..steps
  std::vector<std::uint8_t> accepted;  // per step t = 1..steps
  std::vector<TransitionRecord> records;
  std::size_t feasibility_violations = 0;

  double acceptance_rate() const {
    if (accepted.empty()) return 0.0;
    std::size_t a = 0;
    for (auto v : accepted) a += v;
    return static_cast<double>(a) / static_cast<double>(accepted.size());
  }

  SpinConfig final_config() const { return configs.at(configs.size() - 1); }
};

struct RunOptions {
  bool record_transitions = true;
  std::uint64_t check_every = 10000;  // feasibility and energy re-validation period; 1 = every step
};

/// One Markov chain over Omega_K. Owns its state and random stream, so a
/// chain can be checkpointed and resumed bit-exactly.
class Chain {
 public:
  Chain(const QuboInstance& inst, std::size_t k, KernelConfig kernel, SpinConfig init, std::uint64_t seed)
      : inst_(&inst), k_(k), kernel_(std::move(kernel)), rng_(seed, 0x43484149ull), scratch_(inst.n()) {
    if (init.size() != inst.n()) throw InvalidArgument("chain: initial configuration has wrong length");
    if (init.hamming_weight() != k)
      throw InvalidArgument("chain: initial configuration has weight " + std::to_string(init.hamming_weight()) +
                            ", expected K=" + std::to_string(k));
    kernel_.validate(inst, k);
    state_ = make_chain_state(inst, std::move(init));
  }

  Move propose() {
    switch (kernel_.kind) {
      case KernelKind::BlockSurrogate: return propose_block_surrogate(state_, *inst_, kernel_, k_, rng_, scratch_);
      case KernelKind::GlobalKawasaki: return propose_global_kawasaki(state_, *inst_, rng_);
      case KernelKind::LocalKawasaki: return propose_local_kawasaki(state_, *inst_, rng_);
    }
    throw InternalError("chain: unknown kernel");
  }

  TransitionRecord step() {
    const Move mv = propose();
    ++step_;
    return accept(state_, mv, kernel_.beta_pi, rng_, step_);
  }

  /// Recomputes weight and energy; returns false on a feasibility violation.
  /// Throws if the cached energy drifted by more than 1e-9.
  bool revalidate() {
    const double e = energy(*inst_, state_.x);
    if (std::abs(e - state_.energy) > 1e-9 * std::max(1.0, std::abs(e)))
      throw InternalError("chain: cached energy drifted from recomputation");
    state_.energy = e;
    state_.weight = state_.x.hamming_weight();
    return state_.weight == k_;
  }

  const ChainState& state() const noexcept { return state_; }
  std::uint64_t steps_taken() const noexcept { return step_; }
  const KernelConfig& kernel() const noexcept { return kernel_; }
  std::size_t k() const noexcept { return k_; }

  Json checkpoint() const {
    const auto& st = rng_.state();
    return Json{{"step", step_},
                {"x", state_.x.to_string()},
                {"energy", state_.energy},
                {"k", k_},
                {"rng", {{"key", st.key}, {"stream", st.stream}, {"block", st.block}, {"position", st.position}}}};
  }

  void restore(const Json& j) {
    try {
      const std::string bits = j.at("x").get<std::string>();
      if (bits.size() != inst_->n()) throw FormatError("checkpoint: configuration length mismatch");
      std::vector<std::uint8_t> v(bits.size());
      for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] != '0' && bits[i] != '1') throw FormatError("checkpoint: bad configuration character");
        v[i] = bits[i] == '1';
      }
      if (j.at("k").get<std::size_t>() != k_) throw FormatError("checkpoint: K mismatch");
      state_ = make_chain_state(*inst_, SpinConfig(std::move(v)));
      state_.energy = j.at("energy").get<double>();
      step_ = j.at("step").get<std::uint64_t>();
      Rng::State st;
      st.key = j.at("rng").at("key").get<std::uint64_t>();
      st.stream = j.at("rng").at("stream").get<std::uint64_t>();
      st.block = j.at("rng").at("block").get<std::uint64_t>();
      st.position = j.at("rng").at("position").get<std::uint32_t>();
      rng_.set_state(st);
    } catch (const Json::exception& e) {
      throw FormatError(std::string("checkpoint: ") + e.what());
    }
    if (state_.weight != k_) throw FormatError("checkpoint: configuration is infeasible");
  }

 private:
  const QuboInstance* inst_;
  std::size_t k_;
  KernelConfig kernel_;
  Rng rng_;
  ProposalScratch scratch_;
  ChainState state_;
  std::uint64_t step_ = 0;
};

/// Continues `chain` for `steps` steps, appending to `trace`.
inline void extend_trace(Chain& chain, ChainTrace& trace, std::uint64_t steps, const RunOptions& opt = {}) {
  for (std::uint64_t t = 0; t < steps; ++t) {
    const TransitionRecord rec = chain.step();
    const std::uint64_t now = chain.steps_taken();
    if (opt.check_every && now % opt.check_every == 0 && !chain.revalidate()) ++trace.feasibility_violations;
    trace.energies.push_back(chain.state().energy);
    trace.accepted.push_back(rec.accepted ? 1 : 0);
    if (opt.record_transitions) trace.records.push_back(rec);
    if (now % trace.thin == 0) trace.configs.push_back(chain.state().x);
  }
  trace.steps = chain.steps_taken();
}

inline ChainTrace begin_trace(const Chain& chain, std::size_t thin) {
  if (thin == 0) throw InvalidArgument("run_chain: thin must be positive");
  ChainTrace trace;
  trace.n = chain.state().x.size();
  trace.k = chain.k();
  trace.thin = thin;
  trace.kernel = kernel_name(chain.kernel().kind);
  trace.configs = PackedConfigs(trace.n);
  trace.configs.push_back(chain.state().x);
  trace.energies.push_back(chain.state().energy);
  return trace;
}

inline ChainTrace run_chain(const QuboInstance& inst, std::size_t k, const KernelConfig& kernel, std::uint64_t steps,
                            const SpinConfig& init, std::uint64_t seed, std::size_t thin = 1,
                            const RunOptions& opt = {}) {
  Chain chain(inst, k, kernel, init, seed);
  ChainTrace trace = begin_trace(chain, thin);
  extend_trace(chain, trace, steps, opt);
  if (!chain.revalidate()) ++trace.feasibility_violations;
  return trace;
}

/// Two independent chains (distinct random streams when the seeds differ)
/// with the same kernel and target.
inline std::pair<ChainTrace, ChainTrace> run_chain_pair(const QuboInstance& inst, std::size_t k,
                                                         const KernelConfig& kernel, std::uint64_t steps,
                                                         const SpinConfig& init_a, const SpinConfig& init_b,
                                                         std::uint64_t seed_a, std::uint64_t seed_b,
                                                         std::size_t thin = 1, const RunOptions& opt = {}) {
  return {run_chain(inst, k, kernel, steps, init_a, seed_a, thin, opt),
          run_chain(inst, k, kernel, steps, init_b, seed_b, thin, opt)};
}

// Trace binary layout (little endian):
//   "DCQT" u32 version=1 u32 n u32 K u32 thin u64 steps u64 n_configs u32 stride
//   u64[n_configs*stride] configs f64[steps+1] energies u8[steps] accepted
// The CSV sidecar has one row per step: step,energy,accepted,kernel_detail,acceptance_prob

inline std::vector<std::uint8_t> encode_trace(const ChainTrace& t) {
  BinaryWriter w;
  w.put_magic("DCQT");
  w.put<std::uint32_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.n));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.k));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.thin));
  w.put<std::uint64_t>(t.steps);
  w.put<std::uint64_t>(t.configs.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.configs.stride()));
  w.put_span<std::uint64_t>(t.configs.words());
  w.put_span<double>(t.energies);
  w.put_span<std::uint8_t>(t.accepted);
  return w.bytes();
}

inline ChainTrace decode_trace(std::span<const std::uint8_t> bytes, const std::string& name = "trace") {
  BinaryReader r(bytes, name);
  r.expect_magic("DCQT");
  if (const auto version = r.get<std::uint32_t>(); version != 1)
    throw FormatError(name + ": unsupported trace version " + std::to_string(version), r.position());
  ChainTrace t;
  t.n = r.get<std::uint32_t>();
  t.k = r.get<std::uint32_t>();
  t.thin = r.get<std::uint32_t>();
  t.steps = r.get<std::uint64_t>();
  const auto count = r.get<std::uint64_t>();
  const auto stride = r.get<std::uint32_t>();
  t.configs = PackedConfigs(t.n);
  if (stride != t.configs.stride()) throw FormatError(name + ": stride disagrees with n", r.position());
  t.configs.words() = r.get_vector<std::uint64_t>(count * stride);
  t.energies = r.get_vector<double>(t.steps + 1);
  t.accepted = r.get_vector<std::uint8_t>(t.steps);
  if (!r.at_end()) throw FormatError(name + ": trailing bytes", r.position());
  return t;
}

inline std::string trace_csv(const ChainTrace& t) {
  std::ostringstream os;
  os.precision(17);
  os << "step,energy,accepted,kernel_detail,acceptance_prob\n";
  os << 0 << ',' << t.energies.front() << ",1,init,1\n";
  for (std::uint64_t s = 1; s <= t.steps; ++s) {
    os << s << ',' << t.energies[s] << ',' << int(t.accepted[s - 1]) << ',';
    if (s - 1 < t.records.size()) os << t.records[s - 1].detail.to_string() << ',' << t.records[s - 1].acceptance_prob;
    else os << ',';
    os << '\n';
  }
  return os.str();
}

/// Writes `<stem>.trace` and `<stem>.csv`.
inline void save_trace(const std::filesystem::path& stem, const ChainTrace& t) {
  auto bin = stem;
  bin += ".trace";
  auto csv = stem;
  csv += ".csv";
  write_file(bin, encode_trace(t));
  write_file(csv, trace_csv(t));
}

inline ChainTrace load_trace(const std::filesystem::path& path) {
  const auto bytes = read_binary_file(path);
  return decode_trace(bytes, path.string());
}

}  // namespace dcqmc
