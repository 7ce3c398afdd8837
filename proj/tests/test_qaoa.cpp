#include <gtest/gtest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <numbers>

#include "dcqmc/nelder_mead.hpp"
#include "dcqmc/partition.hpp"
#include "dcqmc/qaoa.hpp"

using namespace dcqmc;

namespace {

Block block_of(std::size_t first, std::size_t size) {
  Block b{{1, 0}, {}};
  for (std::size_t t = 0; t < size; ++t) b.vertices.push_back(static_cast<Index>(first + t));
  return b;
}

// Dense 2^q x 2^q mixer from Pauli matrices.
Eigen::MatrixXcd dense_mixer(std::size_t q, const std::vector<MixerEdge>& edges) {
  const std::size_t d = std::size_t{1} << q;
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(d, d);
  const Complex i1(0, 1);
  for (const auto& e : edges)
    for (std::size_t z = 0; z < d; ++z) {
      const std::size_t za = (z >> e.a) & 1u, zb = (z >> e.b) & 1u;
      // X_a X_b flips both bits; Y_a Y_b flips both with phase (i)(i) * signs.
      const std::size_t w = z ^ ((std::size_t{1} << e.a) | (std::size_t{1} << e.b));
      const Complex ya = za ? -i1 : i1, yb = zb ? -i1 : i1;
      h(w, z) += 0.5 * (1.0 + ya * yb);
    }
  return h;
}

Eigen::VectorXcd to_eigen(const Statevector& s) {
  Eigen::VectorXcd v(s.dim());
  for (std::size_t z = 0; z < s.dim(); ++z) v(z) = s[z];
  return v;
}

Statevector random_state(std::size_t q, Rng& rng) {
  std::vector<Complex> a(std::size_t{1} << q);
  double n = 0;
  for (auto& c : a) {
    c = {standard_normal(rng), standard_normal(rng)};
    n += std::norm(c);
  }
  for (auto& c : a) c /= std::sqrt(n);
  return Statevector(a);
}

}  // namespace

TEST(RingMixer, EdgeSets) {
  EXPECT_TRUE(ring_mixer_edges(1).empty());
  EXPECT_EQ(ring_mixer_edges(2).size(), 1u);
  EXPECT_EQ(ring_mixer_edges(5).size(), 5u);
}

TEST(BlockProblem, DiagonalMatchesRestrictedEnergy) {
  const auto inst = gen_regular_instance(12, 3, 1);
  const auto p = build_partition(inst, {6, 6}, 1);
  for (const auto& block : p) {
    const auto bp = make_block_problem(inst, block);
    for (std::size_t z = 0; z < bp.dim(); ++z) {
      double e = 0;
      for (std::size_t a = 0; a < block.size(); ++a) {
        if (!((z >> a) & 1u)) continue;
        e += inst.linear()[block.vertices[a]];
        for (std::size_t b = a + 1; b < block.size(); ++b)
          if ((z >> b) & 1u) e += inst.coupling(block.vertices[a], block.vertices[b]);
      }
      EXPECT_NEAR(bp.diag_energies[z], e, 1e-12);
    }
  }
}

TEST(Mixer, DenseHamiltonianIsSymmetricHopping) {
  // The XY form only couples |01> and |10>, with unit amplitude.
  const auto h = dense_mixer(2, {{0, 1}});
  EXPECT_NEAR(std::abs(h(1, 2) - 1.0), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(h(2, 1) - 1.0), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(h(0, 3)), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(h(3, 0)), 0.0, 1e-15);
}

TEST(Mixer, TaylorAndSpectralMatchDenseExponential) {
  Rng rng(2);
  int cases = 0;
  for (std::size_t q = 2; q <= 8; ++q) {
    const auto inst = gen_regular_instance(8, 3, q);
    const auto bp = make_block_problem(inst, block_of(0, q));
    const auto h = dense_mixer(q, bp.mixer_edges);
    const XyMixerPropagator prop(bp);
    for (int t = 0; t < 6; ++t, ++cases) {
      const double beta = uniform(rng, -3.0, 3.0);
      const auto psi = random_state(q, rng);
      const Eigen::MatrixXcd u = (Complex(0, -beta) * h).exp();
      const Eigen::VectorXcd ref = u * to_eigen(psi);
      Statevector a = psi, b = psi;
      apply_xy_mixer_layer(a, bp, beta);
      prop.apply(b, beta);
      EXPECT_LT((to_eigen(a) - ref).norm(), 1e-9) << "q=" << q;
      EXPECT_LT((to_eigen(b) - ref).norm(), 1e-9) << "q=" << q;
    }
  }
  EXPECT_EQ(cases, 42);
}

TEST(Mixer, ConservesHammingWeightMasses) {
  Rng rng(3);
  const auto inst = gen_regular_instance(10, 3, 3);
  const auto bp = make_block_problem(inst, block_of(0, 10));
  auto psi = random_state(10, rng);
  const auto before = psi.weight_masses();
  apply_xy_mixer_layer(psi, bp, 1.3);
  const auto after = psi.weight_masses();
  for (std::size_t w = 0; w < before.size(); ++w) EXPECT_NEAR(before[w], after[w], 1e-10);
}

TEST(Circuit, FixedWeightInputStaysOnItsSector) {
  const auto inst = gen_regular_instance(8, 3, 4);
  const QaoaSimulator sim(make_block_problem(inst, block_of(0, 6)));
  std::vector<Complex> amps(64);
  amps[0b000111] = 1.0;
  const QaoaParams params{{0.3, -0.8, 1.1}, {0.7, 0.2, -1.4}};
  const auto out = sim.evolve(params, Statevector(amps));
  const auto m = out.weight_masses();
  double leak = 0;
  for (std::size_t w = 0; w < m.size(); ++w)
    if (w != 3) leak += m[w];
  EXPECT_LT(leak, 1e-12);
  EXPECT_NEAR(out.norm(), 1.0, 1e-12);
}

TEST(Circuit, MatchesDenseCircuitOracle) {
  Rng rng(5);
  const auto inst = gen_regular_instance(8, 3, 5);
  const auto bp = make_block_problem(inst, block_of(1, 5));
  const QaoaSimulator sim(bp);
  const auto h = dense_mixer(5, bp.mixer_edges);
  Eigen::VectorXd diag(bp.dim());
  for (std::size_t z = 0; z < bp.dim(); ++z) diag(z) = bp.diag_energies[z];
  const QaoaParams params{{0.4, 1.2}, {-0.6, 0.9}};
  const auto init = prepare_initial_state(5, 1.0);
  Eigen::VectorXcd v = to_eigen(init);
  for (std::size_t l = 0; l < 2; ++l) {
    for (Eigen::Index z = 0; z < v.size(); ++z) v(z) *= std::polar(1.0, -params.gammas[l] * diag(z));
    v = (Complex(0, -params.betas[l]) * h).exp() * v;
  }
  EXPECT_LT((to_eigen(sim.evolve(params, init)) - v).norm(), 1e-9);
  double e = 0;
  for (Eigen::Index z = 0; z < v.size(); ++z) e += std::norm(v(z)) * diag(z);
  EXPECT_NEAR(sim.loss(params, init), e, 1e-9);
}

TEST(InitialState, ProductStateWeights) {
  const auto s = prepare_initial_state(4, std::numbers::pi / 2);
  for (std::size_t z = 0; z < 16; ++z) EXPECT_NEAR(std::norm(s[z]), 1.0 / 16, 1e-15);
  const double angle = biased_angle_for_target_weight(8, 3.0);
  const auto m = prepare_initial_state(8, angle).weight_masses();
  double mean = 0;
  for (std::size_t w = 0; w < m.size(); ++w) mean += w * m[w];
  EXPECT_NEAR(mean, 3.0, 1e-12);
  EXPECT_THROW(prepare_initial_state(3, 4.0), InvalidArgument);
  const auto angles = default_training_angles(4, {0.5});
  ASSERT_EQ(angles.size(), 10u);
  EXPECT_DOUBLE_EQ(angles.front(), 0.0);
  EXPECT_NEAR(angles[8], std::numbers::pi, 1e-12);
}

TEST(NelderMead, MinimisesQuadratic) {
  auto f = [](const std::vector<double>& x) { return (x[0] - 1) * (x[0] - 1) + 3 * (x[1] + 2) * (x[1] + 2); };
  NelderMeadOptions opt;
  opt.value_tolerance = 1e-14;
  opt.max_evaluations = 5000;
  const auto r = nelder_mead(f, {0.0, 0.0}, opt);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.x[0], 1.0, 1e-5);
  EXPECT_NEAR(r.x[1], -2.0, 1e-5);
}

TEST(Optimizer, LowersEnergyAndIsDeterministic) {
  const auto inst = gen_regular_instance(16, 3, 6);
  const QaoaSimulator sim(make_block_problem(inst, block_of(0, 6)));
  const auto init = prepare_initial_state(6, std::numbers::pi / 2);
  QaoaOptimizerConfig cfg;
  cfg.depth = 2;
  cfg.restarts = 3;
  const auto a = optimize_params(sim, init, 11, cfg);
  const auto b = optimize_params(sim, init, 11, cfg);
  EXPECT_LT(a.loss, a.initial_loss);
  EXPECT_EQ(a.params.gammas, b.params.gammas);
  EXPECT_EQ(a.params.betas, b.params.betas);
  ASSERT_EQ(a.restart_losses.size(), 3u);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_LE(a.restart_losses[r], a.start_losses[r]);
  EXPECT_LE(a.evaluations, 3u * (400 * 2 + 1) + 3 * 10);
}

TEST(TrainingSet, SamplesFollowBornRule) {
  const auto inst = gen_regular_instance(8, 3, 7);
  const QaoaSimulator sim(make_block_problem(inst, block_of(0, 4)));
  const QaoaParams params{{0.5}, {0.8}};
  const std::vector<double> angles{1.0, 2.0};
  const auto set = generate_training_set(sim, params, angles, 40000, 3);
  ASSERT_EQ(set.size(), 80000u);
  EXPECT_NO_THROW(set.validate());
  for (std::size_t a = 0; a < 2; ++a) {
    const auto p = sim.evolve(params, prepare_initial_state(4, angles[a])).probabilities();
    std::vector<double> counts(16, 0.0);
    for (std::size_t n = 0; n < set.size(); ++n)
      if (set.provenance[n] == a) counts[set.states[n]] += 1;
    double tv = 0;
    for (std::size_t z = 0; z < 16; ++z) tv += 0.5 * std::abs(counts[z] / 40000 - p[z]);
    EXPECT_LT(tv, 0.02);
  }
}

TEST(TrainingSet, FileRoundTripAndCorruption) {
  const auto inst = gen_regular_instance(8, 3, 8);
  const auto bp = make_block_problem(inst, block_of(0, 4));
  const auto set = generate_training_set(bp, {{0.5}, {0.8}}, {1.0}, 100, 3);
  const auto bytes = encode_sample_set(set);
  const auto back = decode_sample_set(bytes);
  EXPECT_EQ(back.states, set.states);
  EXPECT_EQ(back.weights, set.weights);
  EXPECT_EQ(back.init_angles, set.init_angles);
  auto cut = bytes;
  cut.pop_back();
  EXPECT_THROW(decode_sample_set(cut), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_sample_set(bad), FormatError);

  const auto j = qaoa_params_to_json({1, 2}, {{0.1, 0.2}, {0.3, 0.4}}, -1.5);
  const auto stored = qaoa_params_from_json(j);
  EXPECT_EQ(stored.block_id.m, 2);
  EXPECT_EQ(stored.params.betas[1], 0.4);
  auto broken = j;
  broken["p"] = 3;
  EXPECT_THROW(qaoa_params_from_json(broken), FormatError);
}
