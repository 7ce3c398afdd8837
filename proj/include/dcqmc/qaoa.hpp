#pragma once

// Exact statevector simulation of block QAOA with an XY mixer, parameter
// optimisation, and sampling of labelled training sets.
//
// Basis convention: bit t of a basis index is the value of the block's t-th
// stored vertex.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "dcqmc/errors.hpp"
#include "dcqmc/io.hpp"
#include "dcqmc/ising.hpp"
#include "dcqmc/nelder_mead.hpp"
#include "dcqmc/partition.hpp"
#include "dcqmc/random.hpp"

namespace dcqmc {

using Complex = std::complex<double>;

inline constexpr std::size_t kMaxQubits = 24;

struct MixerEdge {
  Index a = 0;
  Index b = 0;
};

/// Ring over the block's stored order: (t, t+1 mod |B|). Two vertices get a
/// single edge and one vertex none.
inline std::vector<MixerEdge> ring_mixer_edges(std::size_t size) {
  std::vector<MixerEdge> edges;
  if (size == 2) edges.push_back({0, 1});
  if (size >= 3)
    for (std::size_t t = 0; t < size; ++t)
      edges.push_back({static_cast<Index>(t), static_cast<Index>((t + 1) % size)});
  return edges;
}

/// Diagonal of the block-internal cost Hamiltonian plus mixer edges.
struct BlockProblem {
  Block block;
  std::vector<double> diag_energies;  // length 2^|B|
  std::vector<MixerEdge> mixer_edges;

  std::size_t num_qubits() const noexcept { return block.vertices.size(); }
  std::size_t dim() const noexcept { return diag_energies.size(); }
};

/// Block restriction E_B(x_B): couplings with both endpoints inside the
/// block plus the block's linear terms. Couplings leaving the block and the
/// constant are dropped.
inline BlockProblem make_block_problem(const QuboInstance& inst, const Block& block) {
  const std::size_t size = block.vertices.size();
  if (size == 0) throw InvalidArgument("make_block_problem: empty block");
  if (size > kMaxQubits) throw ResourceLimit("make_block_problem: block exceeds " + std::to_string(kMaxQubits) + " qubits");
  std::vector<std::size_t> local(inst.n(), size);
  for (std::size_t t = 0; t < size; ++t) local[block.vertices[t]] = t;
  std::vector<double> lin(size);
  struct LocalEdge {
    std::size_t a, b;
    double q;
  };
  std::vector<LocalEdge> edges;
  for (std::size_t t = 0; t < size; ++t) {
    const Index v = block.vertices[t];
    lin[t] = inst.linear()[v];
    for (const auto& nb : inst.neighbors(v)) {
      const std::size_t u = local[nb.vertex];
      if (u < size && u > t) edges.push_back({t, u, nb.q});
    }
  }
  BlockProblem bp{block, std::vector<double>(std::size_t{1} << size, 0.0), ring_mixer_edges(size)};
  for (std::size_t z = 0; z < bp.diag_energies.size(); ++z) {
    double e = 0.0;
    for (std::size_t t = 0; t < size; ++t)
      if ((z >> t) & 1u) e += lin[t];
    for (const auto& le : edges)
      if (((z >> le.a) & 1u) && ((z >> le.b) & 1u)) e += le.q;
    bp.diag_energies[z] = e;
  }
  return bp;
}

struct QaoaParams {
  std::vector<double> gammas;
  std::vector<double> betas;

  std::size_t depth() const noexcept { return gammas.size(); }

  void validate() const {
    if (gammas.empty() || gammas.size() != betas.size())
      throw InvalidArgument("QaoaParams: need p >= 1 gammas and as many betas");
  }

  std::vector<double> flatten() const {
    std::vector<double> v(gammas);
    v.insert(v.end(), betas.begin(), betas.end());
    return v;
  }

  static QaoaParams unflatten(const std::vector<double>& v) {
    const std::size_t p = v.size() / 2;
    return {{v.begin(), v.begin() + static_cast<std::ptrdiff_t>(p)}, {v.begin() + static_cast<std::ptrdiff_t>(p), v.end()}};
  }
};

class Statevector {
 public:
  Statevector() = default;
  explicit Statevector(std::vector<Complex> amps) : amps_(std::move(amps)) {
    if (!std::has_single_bit(amps_.size())) throw InvalidArgument("Statevector: length must be a power of two");
  }

  std::size_t dim() const noexcept { return amps_.size(); }
  std::size_t num_qubits() const noexcept { return static_cast<std::size_t>(std::countr_zero(amps_.size())); }
  std::vector<Complex>& amps() noexcept { return amps_; }
  const std::vector<Complex>& amps() const noexcept { return amps_; }
  Complex operator[](std::size_t z) const noexcept { return amps_[z]; }

  double norm() const noexcept {
    double s = 0.0;
    for (const auto& a : amps_) s += std::norm(a);
    return std::sqrt(s);
  }

  std::vector<double> probabilities() const {
    std::vector<double> p(amps_.size());
    for (std::size_t z = 0; z < amps_.size(); ++z) p[z] = std::norm(amps_[z]);
    return p;
  }

  /// Probability mass per Hamming weight 0..num_qubits.
  std::vector<double> weight_masses() const {
    std::vector<double> m(num_qubits() + 1, 0.0);
    for (std::size_t z = 0; z < amps_.size(); ++z) m[static_cast<std::size_t>(std::popcount(z))] += std::norm(amps_[z]);
    return m;
  }

 private:
  std::vector<Complex> amps_;
};

/// Product state of cos(angle/2)|0> + sin(angle/2)|1> on every qubit.
inline Statevector prepare_initial_state(std::size_t size, double angle) {
  if (size == 0) throw InvalidArgument("prepare_initial_state: size must be positive");
  if (size > kMaxQubits) throw ResourceLimit("prepare_initial_state: more than " + std::to_string(kMaxQubits) + " qubits");
  if (!(angle >= 0.0 && angle <= std::numbers::pi)) throw InvalidArgument("prepare_initial_state: angle outside [0, pi]");
  const double c = std::cos(angle / 2), s = std::sin(angle / 2);
  std::vector<Complex> amps(std::size_t{1} << size);
  for (std::size_t z = 0; z < amps.size(); ++z) {
    const int ones = std::popcount(z);
    amps[z] = std::pow(s, ones) * std::pow(c, static_cast<int>(size) - ones);
  }
  return Statevector(std::move(amps));
}

/// Angle whose product state has expected Hamming weight `target_weight`.
inline double biased_angle_for_target_weight(std::size_t block_size, double target_weight) {
  if (block_size == 0 || !(target_weight >= 0.0 && target_weight <= static_cast<double>(block_size)))
    throw InvalidArgument("biased_angle_for_target_weight: target weight outside [0, block size]");
  return 2.0 * std::asin(std::sqrt(target_weight / static_cast<double>(block_size)));
}

/// Nine angles whose expected weights are evenly spaced over 0..|B|, plus any
/// extra angles (e.g. a biased one) appended.
inline std::vector<double> default_training_angles(std::size_t block_size, std::vector<double> extra = {}) {
  std::vector<double> angles;
  for (int t = 0; t <= 8; ++t)
    angles.push_back(biased_angle_for_target_weight(block_size, static_cast<double>(block_size) * t / 8.0));
  angles.insert(angles.end(), extra.begin(), extra.end());
  return angles;
}

inline void check_dims(const Statevector& state, const BlockProblem& bp) {
  if (state.dim() != bp.dim()) throw InvalidArgument("statevector dimension differs from block problem");
}

/// amps[z] *= exp(-i gamma E_B(z)).
inline void apply_cost_layer(Statevector& state, const BlockProblem& bp, double gamma) {
  check_dims(state, bp);
  auto& a = state.amps();
  for (std::size_t z = 0; z < a.size(); ++z) a[z] *= std::polar(1.0, -gamma * bp.diag_energies[z]);
}

/// out += H_M in, where H_M = 1/2 sum (X_a X_b + Y_a Y_b) maps |..01..> <-> |..10..>.
inline void apply_xy_hamiltonian(const std::vector<MixerEdge>& edges, const std::vector<Complex>& in,
                                 std::vector<Complex>& out) {
  for (std::size_t z = 0; z < in.size(); ++z) {
    if (in[z] == Complex{}) continue;
    for (const auto& e : edges) {
      const std::size_t ba = (z >> e.a) & 1u, bb = (z >> e.b) & 1u;
      if (ba != bb) out[z ^ ((std::size_t{1} << e.a) | (std::size_t{1} << e.b))] += in[z];
    }
  }
}

/// exp(-i beta H_M)|psi> by truncated Taylor series over r = ceil(|beta| |E|)
/// sub-steps, each summed until the appended term's norm drops below 1e-13.
inline void apply_xy_mixer_layer(Statevector& state, const BlockProblem& bp, double beta) {
  check_dims(state, bp);
  const auto steps = static_cast<std::size_t>(std::ceil(std::abs(beta) * static_cast<double>(bp.mixer_edges.size())));
  if (steps == 0) return;
  const double dt = beta / static_cast<double>(steps);
  const double norm_in = state.norm();
  auto& psi = state.amps();
  std::vector<Complex> term(psi.size()), next(psi.size());
  for (std::size_t step = 0; step < steps; ++step) {
    term = psi;
    for (int k = 1;; ++k) {
      if (k > 200) throw InternalError("apply_xy_mixer_layer: Taylor series did not converge");
      std::fill(next.begin(), next.end(), Complex{});
      apply_xy_hamiltonian(bp.mixer_edges, term, next);
      const Complex factor(0.0, -dt / k);
      double term_norm = 0.0;
      for (std::size_t z = 0; z < next.size(); ++z) {
        term[z] = factor * next[z];
        psi[z] += term[z];
        term_norm += std::norm(term[z]);
      }
      if (std::sqrt(term_norm) < 1e-13) break;
    }
  }
  const double norm_out = state.norm();
  if (norm_out > 0.0 && std::abs(norm_out - norm_in) > 0.0)
    for (auto& a : psi) a *= norm_in / norm_out;
}

/// Spectral form of exp(-i beta H_M): H_M is block diagonal over Hamming
/// weight, so each weight subspace is diagonalised once and reused for every
/// beta. Used on the optimisation hot path.
class XyMixerPropagator {
 public:
  /// Largest weight-subspace dimension handled spectrally.
  static constexpr std::size_t kMaxSubspace = 1024;

  static bool feasible(std::size_t qubits) {
    return binomial(qubits, qubits / 2) <= static_cast<double>(kMaxSubspace);
  }

  explicit XyMixerPropagator(const BlockProblem& bp) {
    const std::size_t q = bp.num_qubits();
    if (!feasible(q)) throw ResourceLimit("XyMixerPropagator: weight subspace too large for spectral propagation");
    std::vector<std::vector<std::size_t>> members(q + 1);
    for (std::size_t z = 0; z < bp.dim(); ++z) members[static_cast<std::size_t>(std::popcount(z))].push_back(z);
    for (auto& idx : members) {
      Subspace sub;
      sub.indices = std::move(idx);
      const auto d = static_cast<Eigen::Index>(sub.indices.size());
      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
      for (Eigen::Index r = 0; r < d; ++r) {
        const std::size_t z = sub.indices[static_cast<std::size_t>(r)];
        for (const auto& e : bp.mixer_edges) {
          if (((z >> e.a) & 1u) == ((z >> e.b) & 1u)) continue;
          const std::size_t z2 = z ^ ((std::size_t{1} << e.a) | (std::size_t{1} << e.b));
          const auto c = std::lower_bound(sub.indices.begin(), sub.indices.end(), z2) - sub.indices.begin();
          h(c, r) += 1.0;
        }
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(h);
      sub.vectors = solver.eigenvectors();
      sub.values = solver.eigenvalues();
      subspaces_.push_back(std::move(sub));
    }
  }

  void apply(Statevector& state, double beta) const {
    auto& psi = state.amps();
    for (const auto& sub : subspaces_) {
      const auto d = static_cast<Eigen::Index>(sub.indices.size());
      Eigen::VectorXcd v(d);
      for (Eigen::Index r = 0; r < d; ++r) v(r) = psi[sub.indices[static_cast<std::size_t>(r)]];
      Eigen::VectorXcd c = sub.vectors.transpose() * v;
      for (Eigen::Index r = 0; r < d; ++r) c(r) *= std::polar(1.0, -beta * sub.values(r));
      v = sub.vectors * c;
      for (Eigen::Index r = 0; r < d; ++r) psi[sub.indices[static_cast<std::size_t>(r)]] = v(r);
    }
  }

 private:
  struct Subspace {
    std::vector<std::size_t> indices;
    Eigen::MatrixXd vectors;
    Eigen::VectorXd values;
  };
  std::vector<Subspace> subspaces_;
};

inline double expected_energy(const Statevector& state, const BlockProblem& bp) {
  check_dims(state, bp);
  double e = 0.0;
  for (std::size_t z = 0; z < state.dim(); ++z) e += std::norm(state[z]) * bp.diag_energies[z];
  return e;
}

/// Runs depth-p circuits for one block. Mixer layers go through the spectral
/// propagator when the block is small enough, otherwise through the Taylor
/// series.
class QaoaSimulator {
 public:
  explicit QaoaSimulator(BlockProblem bp) : bp_(std::move(bp)) {
    if (XyMixerPropagator::feasible(bp_.num_qubits())) propagator_ = std::make_unique<XyMixerPropagator>(bp_);
  }

  const BlockProblem& problem() const noexcept { return bp_; }

  void apply_mixer(Statevector& state, double beta) const {
    if (propagator_) propagator_->apply(state, beta);
    else apply_xy_mixer_layer(state, bp_, beta);
  }

  /// Cost layer then mixer layer for l = 1..p.
  Statevector evolve(const QaoaParams& params, const Statevector& init) const {
    params.validate();
    check_dims(init, bp_);
    Statevector state = init;
    for (std::size_t l = 0; l < params.depth(); ++l) {
      apply_cost_layer(state, bp_, params.gammas[l]);
      apply_mixer(state, params.betas[l]);
    }
    return state;
  }

  double loss(const QaoaParams& params, const Statevector& init) const {
    return expected_energy(evolve(params, init), bp_);
  }

 private:
  BlockProblem bp_;
  std::unique_ptr<XyMixerPropagator> propagator_;
};

inline Statevector qaoa_state(const BlockProblem& bp, const QaoaParams& params, const Statevector& init) {
  return QaoaSimulator(bp).evolve(params, init);
}

struct QaoaOptimizerConfig {
  std::size_t depth = 5;
  std::size_t restarts = 8;
  std::size_t evaluations_per_layer = 400;  // budget per restart is this times p
  double tolerance = 1e-6;
};

struct QaoaOptimization {
  QaoaParams params;
  double loss = 0.0;
  double initial_loss = 0.0;               // <H_C> of the initial state
  std::vector<double> restart_losses;      // best loss reached from each start
  std::vector<double> start_losses;        // loss at each random start
  std::size_t evaluations = 0;
};

/// Best-of-restarts Nelder-Mead on the exact expected energy. Restart r draws
/// its start (gamma_l, beta_l ~ U(0, pi/2)) from its own stream derived from
/// (seed, r), so adding restarts never changes earlier ones.
inline QaoaOptimization optimize_params(const QaoaSimulator& sim, const Statevector& init, std::uint64_t seed,
                                        const QaoaOptimizerConfig& cfg = {}) {
  if (cfg.depth == 0 || cfg.restarts == 0) throw InvalidArgument("optimize_params: p and restarts must be positive");
  QaoaOptimization out;
  out.initial_loss = expected_energy(init, sim.problem());
  out.loss = std::numeric_limits<double>::infinity();
  auto objective = [&](const std::vector<double>& v) { return sim.loss(QaoaParams::unflatten(v), init); };
  NelderMeadOptions opt;
  opt.max_evaluations = cfg.evaluations_per_layer * cfg.depth;
  opt.value_tolerance = cfg.tolerance;
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    Rng rng(derive_seed(seed, r), 0);
    std::vector<double> start(2 * cfg.depth);
    for (auto& v : start) v = uniform(rng, 0.0, std::numbers::pi / 2);
    const double start_loss = objective(start);
    auto res = nelder_mead(objective, start, opt);
    out.evaluations += res.evaluations + 1;
    out.start_losses.push_back(start_loss);
    out.restart_losses.push_back(res.value);
    if (res.value < out.loss) {
      out.loss = res.value;
      out.params = QaoaParams::unflatten(res.x);
    }
  }
  return out;
}

inline QaoaOptimization optimize_params(const BlockProblem& bp, std::size_t p, const Statevector& init,
                                        std::size_t restarts, std::uint64_t seed) {
  QaoaOptimizerConfig cfg;
  cfg.depth = p;
  cfg.restarts = restarts;
  return optimize_params(QaoaSimulator(bp), init, seed, cfg);
}

/// Computational-basis measurement by inverting the cumulative distribution.
inline std::vector<std::uint32_t> sample_basis_states(const Statevector& state, std::size_t shots, Rng& rng) {
  std::vector<double> cdf(state.dim());
  double acc = 0.0;
  for (std::size_t z = 0; z < state.dim(); ++z) {
    acc += std::norm(state[z]);
    cdf[z] = acc;
  }
  std::vector<std::uint32_t> out;
  out.reserve(shots);
  for (std::size_t s = 0; s < shots; ++s) {
    const double u = uniform01(rng) * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    out.push_back(static_cast<std::uint32_t>(it - cdf.begin()));
  }
  return out;
}

/// Labelled block samples. Bit t of states[n] is the t-th block variable.
struct BlockSampleSet {
  BlockId block_id;
  std::size_t block_size = 0;
  std::vector<std::uint32_t> states;
  std::vector<std::uint16_t> weights;
  std::vector<std::uint16_t> provenance;  // index into init_angles
  std::vector<double> init_angles;

  std::size_t size() const noexcept { return states.size(); }

  std::vector<std::uint8_t> bits(std::size_t n) const {
    std::vector<std::uint8_t> b(block_size);
    for (std::size_t t = 0; t < block_size; ++t) b[t] = static_cast<std::uint8_t>((states[n] >> t) & 1u);
    return b;
  }

  void validate() const {
    if (states.size() != weights.size() || states.size() != provenance.size())
      throw InvalidArgument("BlockSampleSet: column lengths differ");
    for (std::size_t n = 0; n < states.size(); ++n)
      if (static_cast<std::size_t>(std::popcount(states[n])) != weights[n] || (states[n] >> block_size) != 0)
        throw InvalidArgument("BlockSampleSet: weight column inconsistent with sample " + std::to_string(n));
  }
};

/// One optimised parameter set evolved from each initial angle; samples are
/// drawn per angle from a stream derived from (seed, angle index).
inline BlockSampleSet generate_training_set(const QaoaSimulator& sim, const QaoaParams& params,
                                            const std::vector<double>& init_angles, std::size_t shots_per_init,
                                            std::uint64_t seed) {
  if (shots_per_init == 0) throw InvalidArgument("generate_training_set: shots must be positive");
  const auto& bp = sim.problem();
  BlockSampleSet set;
  set.block_id = bp.block.id;
  set.block_size = bp.num_qubits();
  set.init_angles = init_angles;
  for (std::size_t a = 0; a < init_angles.size(); ++a) {
    const Statevector state = sim.evolve(params, prepare_initial_state(bp.num_qubits(), init_angles[a]));
    Rng rng(derive_seed(seed, a), 1);
    for (auto z : sample_basis_states(state, shots_per_init, rng)) {
      set.states.push_back(z);
      set.weights.push_back(static_cast<std::uint16_t>(std::popcount(z)));
      set.provenance.push_back(static_cast<std::uint16_t>(a));
    }
  }
  return set;
}

inline BlockSampleSet generate_training_set(const BlockProblem& bp, const QaoaParams& params,
                                            const std::vector<double>& init_angles, std::size_t shots_per_init,
                                            std::uint64_t seed) {
  return generate_training_set(QaoaSimulator(bp), params, init_angles, shots_per_init, seed);
}

// Trained parameters: {"block_id": [s, m], "p": p, "gammas": [...], "betas": [...], "loss": L}

inline Json qaoa_params_to_json(const BlockId& id, const QaoaParams& params, double loss) {
  return Json{{"block_id", {id.s, id.m}},
              {"p", params.depth()},
              {"gammas", params.gammas},
              {"betas", params.betas},
              {"loss", loss}};
}

struct StoredQaoaParams {
  BlockId block_id;
  QaoaParams params;
  double loss = 0.0;
};

inline StoredQaoaParams qaoa_params_from_json(const Json& j) {
  try {
    StoredQaoaParams out;
    out.block_id = {j.at("block_id").at(0).get<int>(), j.at("block_id").at(1).get<int>()};
    out.params.gammas = j.at("gammas").get<std::vector<double>>();
    out.params.betas = j.at("betas").get<std::vector<double>>();
    out.loss = j.at("loss").get<double>();
    if (out.params.depth() != j.at("p").get<std::size_t>()) throw FormatError("qaoa params: p disagrees with gammas");
    out.params.validate();
    return out;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("qaoa params: ") + e.what());
  }
}

// Sample set binary layout (little endian):
//   "DCQS" u32 version=1 i32 s i32 m u32 |B| u64 count u32 n_angles f64[n_angles]
//   count x ceil(|B|/8) bytes of packed samples, count x u16 provenance

inline std::vector<std::uint8_t> encode_sample_set(const BlockSampleSet& set) {
  BinaryWriter w;
  w.put_magic("DCQS");
  w.put<std::uint32_t>(1);
  w.put<std::int32_t>(set.block_id.s);
  w.put<std::int32_t>(set.block_id.m);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.block_size));
  w.put<std::uint64_t>(set.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.init_angles.size()));
  w.put_span<double>(set.init_angles);
  const std::size_t nbytes = (set.block_size + 7) / 8;
  for (auto z : set.states)
    for (std::size_t b = 0; b < nbytes; ++b) w.put<std::uint8_t>(static_cast<std::uint8_t>(z >> (8 * b)));
  w.put_span<std::uint16_t>(set.provenance);
  return w.bytes();
}

inline BlockSampleSet decode_sample_set(std::span<const std::uint8_t> bytes, const std::string& name = "sample set") {
  BinaryReader r(bytes, name);
  r.expect_magic("DCQS");
  if (const auto version = r.get<std::uint32_t>(); version != 1)
    throw FormatError(name + ": unsupported version " + std::to_string(version), r.position());
  BlockSampleSet set;
  set.block_id.s = r.get<std::int32_t>();
  set.block_id.m = r.get<std::int32_t>();
  set.block_size = r.get<std::uint32_t>();
  if (set.block_size == 0 || set.block_size > kMaxQubits) throw FormatError(name + ": bad block size", r.position());
  const auto count = r.get<std::uint64_t>();
  set.init_angles = r.get_vector<double>(r.get<std::uint32_t>());
  const std::size_t nbytes = (set.block_size + 7) / 8;
  r.require(count * (nbytes + 2));
  set.states.resize(count);
  for (auto& z : set.states) {
    z = 0;
    for (std::size_t b = 0; b < nbytes; ++b) z |= static_cast<std::uint32_t>(r.get<std::uint8_t>()) << (8 * b);
  }
  set.provenance = r.get_vector<std::uint16_t>(count);
  if (!r.at_end()) throw FormatError(name + ": trailing bytes", r.position());
  set.weights.resize(count);
  for (std::size_t n = 0; n < count; ++n) set.weights[n] = static_cast<std::uint16_t>(std::popcount(set.states[n]));
  try {
    set.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(name + ": " + e.what(), r.position());
  }
  return set;
}

inline void save_sample_set(const std::filesystem::path& path, const BlockSampleSet& set) {
  write_file(path, encode_sample_set(set));
}

inline BlockSampleSet load_sample_set(const std::filesystem::path& path) {
  const auto bytes = read_binary_file(path);
  return decode_sample_set(bytes, path.string());
}

}  // namespace dcqmc
