// Feature selection on a small synthetic dataset: build the mutual
// information QUBO, find its exact weight-K minimiser, then search for it
// with global Kawasaki moves at low temperature.

#include <iostream>

#include "dcqmc/analysis.hpp"
#include "dcqmc/featureselect.hpp"

using namespace dcqmc;

int main() {
  // 12 binary pixels, 4 classes. Pixels 0-3 carry label bits (two of them
  // redundant copies), the rest are noise.
  Rng rng(5);
  LabeledDataset train;
  train.n_pixels = 12;
  train.n_classes = 4;
  for (int s = 0; s < 3000; ++s) {
    const auto y = static_cast<std::uint8_t>(uniform_index(rng, 4));
    train.labels.push_back(y);
    for (std::size_t p = 0; p < 12; ++p) {
      std::uint8_t v = uniform01(rng) < 0.5;
      if (p == 0 || p == 2) v = uniform01(rng) < 0.9 ? (y & 1u) : !(y & 1u);
      if (p == 1 || p == 3) v = uniform01(rng) < 0.85 ? (y >> 1) & 1u : !((y >> 1) & 1u);
      train.images.push_back(v);
    }
  }
  const std::size_t k = 3;
  const MiTable mi = build_mi_table(train);
  const QuboInstance qubo = build_feature_qubo(mi, k);

  const auto table = enumerate_constrained_boltzmann(qubo, k, 1.0);
  std::size_t best = 0;
  for (std::size_t s = 1; s < table.size(); ++s)
    if (table.energies[s] < table.energies[best]) best = s;
  std::cout << "exact minimiser: " << FeatureMask::from_config(unpack_key(table.states[best], 12)).to_text()
            << "energy " << table.energies[best] << '\n';

  KernelConfig kc;
  kc.kind = KernelKind::GlobalKawasaki;
  kc.beta_pi = 100;
  const auto trace = run_chain(qubo, k, kc, 2000, random_feasible_config(12, k, rng), 3);
  const auto best_trace = best_energy_trace(trace);
  std::cout << "chain best after 100 steps " << best_trace[100] << ", after 2000 steps " << best_trace.back() << '\n';
  std::cout << "linear-terms mask: " << linear_terms_mask(mi, k).to_text();
}
