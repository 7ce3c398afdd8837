// Samples a fixed-weight Boltzmann distribution on an 8-spin instance with
// all three kernels and compares the visit frequencies with exact
// enumeration.

#include <cmath>
#include <iostream>
#include <memory>
#include <numbers>

#include "dcqmc/mcmc.hpp"

using namespace dcqmc;

int main() {
  const std::size_t n = 8, k = 4;
  const double beta = 0.5;
  const auto inst = gen_regular_instance(n, 3, 7);
  const auto exact = enumerate_constrained_boltzmann(inst, k, beta);

  // Surrogates: one depth-2 circuit per block, samples from the default angles,
  // a short MADE fit.
  auto pp = std::make_shared<PartitionPair>(build_partition_pair(inst, {4, 4}, {4, 4}, 7));
  ModelMap models;
  for (int s : {1, 2})
    for (const auto& block : pp->partition(s)) {
      const QaoaSimulator sim(make_block_problem(inst, block));
      const auto init = prepare_initial_state(block.size(), std::numbers::pi / 2);
      QaoaOptimizerConfig qc;
      qc.depth = 2;
      qc.restarts = 2;
      const auto opt = optimize_params(sim, init, derive_seed(7, s, block.id.m), qc);
      const auto data = generate_training_set(sim, opt.params, default_training_angles(block.size()), 1000,
                                              derive_seed(8, s, block.id.m));
      TrainConfig tc;
      tc.epochs = 20;
      auto model = ConditionalMadeModel::build(block.size(), tc, derive_seed(9, s, block.id.m), block.id);
      train(model, data, tc);
      models[block.id] = std::make_shared<const ConditionalMadeModel>(std::move(model));
      std::cout << "block " << block.id.to_string() << ": circuit energy " << opt.loss << '\n';
    }

  Rng rng(1);
  const auto start = random_feasible_config(n, k, rng);
  for (auto kind : {KernelKind::BlockSurrogate, KernelKind::GlobalKawasaki, KernelKind::LocalKawasaki}) {
    KernelConfig kc;
    kc.kind = kind;
    kc.beta_pi = beta;
    if (kind == KernelKind::BlockSurrogate) {
      kc.partitions = pp;
      kc.models = models;
    }
    RunOptions opt;
    opt.record_transitions = false;
    const auto trace = run_chain(inst, k, kc, 200000, start, 11, 1, opt);
    std::vector<double> counts(exact.size(), 0.0);
    for (std::size_t t = 0; t < trace.configs.size(); ++t) counts[exact.find(trace.configs.key(t))] += 1;
    double tv = 0;
    for (std::size_t i = 0; i < exact.size(); ++i)
      tv += 0.5 * std::abs(counts[i] / trace.configs.size() - exact.probabilities[i]);
    std::cout << kernel_name(kind) << ": acceptance " << trace.acceptance_rate() << ", TV distance " << tv << '\n';
  }
}
