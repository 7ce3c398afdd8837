#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "dcqmc/mcmc.hpp"

using namespace dcqmc;

namespace {

struct Fixture {
  QuboInstance inst;
  std::size_t k;
  std::shared_ptr<const PartitionPair> pp;
  ModelMap models;

  Fixture(std::size_t n, std::size_t k_, std::size_t block, std::uint64_t seed)
      : inst(gen_regular_instance(n, 3, seed)), k(k_) {
    const auto sizes = spread_block_sizes(n, block);
    pp = std::make_shared<PartitionPair>(build_partition_pair(inst, sizes, sizes, seed));
    std::uint64_t model_seed = seed * 100;
    for (int s : {1, 2})
      for (const auto& b : pp->partition(s))
        models[b.id] = std::make_shared<ConditionalMadeModel>(
            ConditionalMadeModel::build(b.size(), {4 * b.size(), 4 * b.size()}, ++model_seed, b.id));
  }

  KernelConfig kernel(KernelKind kind, double beta) const {
    KernelConfig c;
    c.kind = kind;
    c.beta_pi = beta;
    if (kind == KernelKind::BlockSurrogate) {
      c.partitions = pp;
      c.models = models;
    }
    return c;
  }
};

using Matrix = std::vector<std::vector<double>>;

// Exact transition matrix over Omega_K built directly from the kernel
// definitions, independent of the proposal code.
Matrix exact_transitions(const Fixture& f, KernelKind kind, double beta, const ConstrainedDistribution& d) {
  const std::size_t n = f.inst.n(), size = d.size();
  Matrix p(size, std::vector<double>(size, 0.0));
  auto mh = [&](std::size_t a, std::size_t b, double q, double log_ratio) {
    const double alpha = std::min(1.0, std::exp(log_ratio));
    p[a][b] += q * alpha;
  };
  for (std::size_t a = 0; a < size; ++a) {
    const SpinConfig x = unpack_key(d.states[a], n);
    const double ex = energy(f.inst, x);
    if (kind == KernelKind::GlobalKawasaki) {
      const double q = 1.0 / (double(f.k) * double(n - f.k));
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
          if (!x[i] || x[j]) continue;
          SpinConfig y = x;
          y.swap_sites(i, j);
          mh(a, d.find(pack_key(y)), q, -beta * (energy(f.inst, y) - ex));
        }
    } else if (kind == KernelKind::LocalKawasaki) {
      const double q = 1.0 / double(f.inst.edges().size());
      for (const auto& e : f.inst.edges()) {
        if (x[e.i] == x[e.j]) {
          p[a][a] += q;
          continue;
        }
        SpinConfig y = x;
        y.swap_sites(e.i, e.j);
        mh(a, d.find(pack_key(y)), q, -beta * (energy(f.inst, y) - ex));
      }
    } else {
      for (int s : {1, 2}) {
        const auto& part = f.pp->partition(s);
        for (const auto& b : part) {
          const auto& model = *f.models.at(b.id);
          const double pick = 0.5 / double(part.size());
          std::uint32_t xb = 0;
          for (std::size_t t = 0; t < b.size(); ++t) xb |= std::uint32_t{x[b.vertices[t]]} << t;
          const std::size_t kb = std::popcount(xb);
          for (std::uint32_t yb = 0; yb < (1u << b.size()); ++yb) {
            const double lq = model.log_prob_state(yb, kb);
            if (std::size_t(std::popcount(yb)) != kb) {
              p[a][a] += pick * std::exp(lq);
              continue;
            }
            SpinConfig y = x;
            for (std::size_t t = 0; t < b.size(); ++t) y.set(b.vertices[t], (yb >> t) & 1u);
            mh(a, d.find(pack_key(y)), pick * std::exp(lq),
               -beta * (energy(f.inst, y) - ex) + model.log_prob_state(xb, kb) - lq);
          }
        }
      }
    }
    double row = 0;
    for (double v : p[a]) row += v;
    p[a][a] += 1.0 - row;
  }
  return p;
}

double tv_from_trace(const ChainTrace& t, const ConstrainedDistribution& d, std::size_t burn) {
  std::vector<double> counts(d.size(), 0.0);
  for (std::size_t s = burn; s < t.configs.size(); ++s) counts[d.find(t.configs.key(s))] += 1;
  const double total = double(t.configs.size() - burn);
  double tv = 0;
  for (std::size_t i = 0; i < d.size(); ++i) tv += 0.5 * std::abs(counts[i] / total - d.probabilities[i]);
  return tv;
}

}  // namespace

TEST(Kernel, NamesRoundTrip) {
  for (auto k : {KernelKind::BlockSurrogate, KernelKind::GlobalKawasaki, KernelKind::LocalKawasaki})
    EXPECT_EQ(parse_kernel(kernel_name(k)), k);
  EXPECT_THROW(parse_kernel("gibbs"), ConfigurationError);
}

TEST(Kernel, TargetIsStationaryForEveryKernel) {
  const Fixture f(8, 4, 4, 3);
  const double beta = 0.7;
  const auto d = enumerate_constrained_boltzmann(f.inst, f.k, beta);
  for (auto kind : {KernelKind::BlockSurrogate, KernelKind::GlobalKawasaki, KernelKind::LocalKawasaki}) {
    const auto p = exact_transitions(f, kind, beta, d);
    for (std::size_t b = 0; b < d.size(); ++b) {
      double flow = 0;
      for (std::size_t a = 0; a < d.size(); ++a) flow += d.probabilities[a] * p[a][b];
      EXPECT_NEAR(flow, d.probabilities[b], 1e-12) << kernel_name(kind);
    }
    // Detailed balance.
    for (std::size_t a = 0; a < d.size(); a += 5)
      for (std::size_t b = 0; b < d.size(); b += 3)
        EXPECT_NEAR(d.probabilities[a] * p[a][b], d.probabilities[b] * p[b][a], 1e-12) << kernel_name(kind);
  }
}

TEST(Kernel, ProposalProbabilitiesMatchExactKernel) {
  // Empirical one-step transition frequencies from a fixed state against the
  // exact transition row.
  const Fixture f(8, 4, 4, 4);
  const double beta = 0.5;
  const auto d = enumerate_constrained_boltzmann(f.inst, f.k, beta);
  for (auto kind : {KernelKind::BlockSurrogate, KernelKind::GlobalKawasaki, KernelKind::LocalKawasaki}) {
    const auto p = exact_transitions(f, kind, beta, d);
    const std::size_t from = 17;
    const auto kernel = f.kernel(kind, beta);
    std::vector<double> counts(d.size(), 0);
    Rng rng(9);
    ProposalScratch scratch(8);
    const int trials = 200000;
    for (int t = 0; t < trials; ++t) {
      ChainState st = make_chain_state(f.inst, unpack_key(d.states[from], 8));
      Move mv;
      if (kind == KernelKind::BlockSurrogate) mv = propose_block_surrogate(st, f.inst, kernel, f.k, rng, scratch);
      else if (kind == KernelKind::GlobalKawasaki) mv = propose_global_kawasaki(st, f.inst, rng);
      else mv = propose_local_kawasaki(st, f.inst, rng);
      accept(st, mv, beta, rng);
      counts[d.find(pack_key(st.x))] += 1;
    }
    double tv = 0;
    for (std::size_t b = 0; b < d.size(); ++b) tv += 0.5 * std::abs(counts[b] / trials - p[from][b]);
    EXPECT_LT(tv, 0.01) << kernel_name(kind);
  }
}

TEST(Chain, SampledDistributionApproachesTarget) {
  const Fixture f(8, 4, 4, 5);
  const double beta = 0.5;
  const auto d = enumerate_constrained_boltzmann(f.inst, f.k, beta);
  Rng init_rng(1);
  const auto init = random_feasible_config(8, 4, init_rng);
  for (auto kind : {KernelKind::BlockSurrogate, KernelKind::GlobalKawasaki, KernelKind::LocalKawasaki}) {
    RunOptions opt;
    opt.record_transitions = false;
    const auto t = run_chain(f.inst, f.k, f.kernel(kind, beta), 200000, init, 7, 1, opt);
    EXPECT_EQ(t.feasibility_violations, 0u);
    EXPECT_LT(tv_from_trace(t, d, 1000), 0.03) << kernel_name(kind);
  }
}

TEST(Chain, EnergyCacheAndWeightStayExact) {
  const Fixture f(16, 8, 4, 6);
  Rng init_rng(2);
  const auto init = random_feasible_config(16, 8, init_rng);
  for (auto kind : {KernelKind::BlockSurrogate, KernelKind::GlobalKawasaki, KernelKind::LocalKawasaki}) {
    RunOptions opt;
    opt.check_every = 1;
    const auto t = run_chain(f.inst, 8, f.kernel(kind, 1.0), 3000, init, 8, 1, opt);
    EXPECT_EQ(t.feasibility_violations, 0u);
    ASSERT_EQ(t.configs.size(), 3001u);
    for (std::size_t s = 0; s < t.configs.size(); s += 97) {
      const auto x = t.configs.at(s);
      EXPECT_EQ(x.hamming_weight(), 8u);
      EXPECT_NEAR(energy(f.inst, x), t.energies[s], 1e-9);
    }
  }
}

TEST(Chain, NullMovesAreAcceptedWithoutConsumingRandomness) {
  // With K = 0 every local edge has equal endpoints.
  const auto inst = gen_regular_instance(6, 3, 1);
  KernelConfig kernel;
  kernel.kind = KernelKind::LocalKawasaki;
  Chain chain(inst, 0, kernel, SpinConfig(6), 4);
  Rng mirror(4, 0x43484149ull);
  for (int t = 0; t < 50; ++t) {
    const auto rec = chain.step();
    EXPECT_TRUE(rec.accepted);
    EXPECT_EQ(rec.detail.kind, KernelDetail::Kind::NullMove);
    uniform_index(mirror, inst.edges().size());
  }
  const auto cp = chain.checkpoint();
  EXPECT_EQ(cp["rng"]["position"].get<std::uint32_t>(), mirror.state().position);
  EXPECT_EQ(cp["rng"]["block"].get<std::uint64_t>(), mirror.state().block);
}

TEST(Chain, WeightMismatchIsRejectedAndLeavesStateAlone) {
  Fixture f(8, 4, 4, 7);
  for (auto& [id, m] : f.models) {
    auto flat = *m;
    flat.zero_parameters();
    m = std::make_shared<ConditionalMadeModel>(flat);
  }
  Rng init_rng(3);
  Chain chain(f.inst, 4, f.kernel(KernelKind::BlockSurrogate, 0.5), random_feasible_config(8, 4, init_rng), 5);
  int mismatches = 0;
  for (int t = 0; t < 500; ++t) {
    const auto before = chain.state().x;
    const auto rec = chain.step();
    if (rec.detail.kind == KernelDetail::Kind::WeightMismatch) {
      ++mismatches;
      EXPECT_FALSE(rec.accepted);
      EXPECT_EQ(chain.state().x, before);
    }
    EXPECT_EQ(chain.state().x.hamming_weight(), 4u);
  }
  EXPECT_GT(mismatches, 100);
}

TEST(Chain, CheckpointResumesBitExactly) {
  const Fixture f(16, 8, 4, 8);
  Rng init_rng(4);
  const auto init = random_feasible_config(16, 8, init_rng);
  for (auto kind : {KernelKind::BlockSurrogate, KernelKind::GlobalKawasaki, KernelKind::LocalKawasaki}) {
    Chain a(f.inst, 8, f.kernel(kind, 0.8), init, 10);
    for (int t = 0; t < 300; ++t) a.step();
    const auto cp = a.checkpoint();
    Chain b(f.inst, 8, f.kernel(kind, 0.8), init, 999);
    b.restore(cp);
    for (int t = 0; t < 300; ++t) {
      a.step();
      b.step();
      ASSERT_EQ(a.state().x, b.state().x) << kernel_name(kind);
      ASSERT_EQ(a.state().energy, b.state().energy);
    }
    auto bad = cp;
    bad["k"] = 3;
    EXPECT_THROW(b.restore(bad), FormatError);
  }
}

TEST(Chain, RejectsBadSetup) {
  const Fixture f(8, 4, 4, 9);
  Rng rng(5);
  EXPECT_THROW(Chain(f.inst, 4, f.kernel(KernelKind::GlobalKawasaki, 0.5), random_feasible_config(8, 3, rng), 1),
               InvalidArgument);
  KernelConfig missing = f.kernel(KernelKind::BlockSurrogate, 0.5);
  missing.models.erase(missing.models.begin());
  EXPECT_THROW(Chain(f.inst, 4, missing, random_feasible_config(8, 4, rng), 1), ConfigurationError);
  EXPECT_THROW(Chain(f.inst, 0, f.kernel(KernelKind::GlobalKawasaki, 0.5), SpinConfig(8), 1), ConfigurationError);
}

TEST(Chain, SameSeedSameTrace) {
  const Fixture f(16, 8, 4, 10);
  Rng rng(6);
  const auto init = random_feasible_config(16, 8, rng);
  const auto kernel = f.kernel(KernelKind::BlockSurrogate, 0.5);
  const auto [a, b] = run_chain_pair(f.inst, 8, kernel, 1000, init, init, 3, 3);
  EXPECT_EQ(a.energies, b.energies);
  EXPECT_EQ(a.configs.words(), b.configs.words());
  const auto [c, d] = run_chain_pair(f.inst, 8, kernel, 1000, init, init, 3, 4);
  EXPECT_NE(c.energies, d.energies);
}

TEST(TraceFile, RoundTripCsvAndCorruption) {
  const Fixture f(70, 35, 8, 11);
  Rng rng(7);
  const auto t = run_chain(f.inst, 35, f.kernel(KernelKind::GlobalKawasaki, 0.5), 200, random_feasible_config(70, 35, rng),
                           2, 3);
  EXPECT_EQ(t.configs.size(), 1u + 200 / 3);
  EXPECT_EQ(t.configs.stride(), 2u);
  const auto bytes = encode_trace(t);
  const auto back = decode_trace(bytes);
  EXPECT_EQ(back.energies, t.energies);
  EXPECT_EQ(back.accepted, t.accepted);
  EXPECT_EQ(back.configs.words(), t.configs.words());
  EXPECT_EQ(back.final_config(), t.final_config());
  auto cut = bytes;
  cut.resize(bytes.size() - 1);
  EXPECT_THROW(decode_trace(cut), FormatError);

  const auto csv = trace_csv(t);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,energy,accepted,kernel_detail,acceptance_prob");
  EXPECT_NE(csv.find(",init,"), std::string::npos);
  EXPECT_NE(csv.find("pair:"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 202);
}
