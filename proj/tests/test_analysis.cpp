#include <gtest/gtest.h>

#include <cmath>

#include "dcqmc/analysis.hpp"

using namespace dcqmc;

namespace {

ChainTrace trace_of(const std::vector<SpinConfig>& xs) {
  ChainTrace t;
  t.n = xs.front().size();
  t.configs = PackedConfigs(t.n);
  for (const auto& x : xs) t.configs.push_back(x);
  return t;
}

std::vector<double> ar1(double phi, std::size_t length, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(length);
  double y = 0;
  for (std::size_t t = 0; t < length; ++t) v[t] = y = phi * y + standard_normal(rng);
  return v;
}

}  // namespace

TEST(Overlap, MatchesDirectCount) {
  Rng rng(1);
  std::vector<SpinConfig> a, b;
  for (int t = 0; t < 40; ++t) {
    a.push_back(random_feasible_config(100, 50, rng));
    b.push_back(random_feasible_config(100, 50, rng));
  }
  const auto s = overlap_series(trace_of(a), trace_of(b), 5);
  ASSERT_EQ(s.values.size(), 35u);
  for (std::size_t t = 0; t < 35; ++t) {
    int common = 0;
    for (std::size_t i = 0; i < 100; ++i) common += a[t + 5][i] && b[t + 5][i];
    EXPECT_DOUBLE_EQ(s.values[t], common / 100.0);
  }
  a.pop_back();
  EXPECT_THROW(overlap_series(trace_of(a), trace_of(b)), InvalidArgument);
}

TEST(Autocorrelation, MatchesBiasedEstimatorFormula) {
  const auto v = ar1(0.6, 300, 2);
  const auto r = autocorrelation(v, 20);
  double mean = 0;
  for (double x : v) mean += x;
  mean /= v.size();
  double c0 = 0;
  for (double x : v) c0 += (x - mean) * (x - mean);
  for (std::size_t l = 0; l <= 20; ++l) {
    double c = 0;
    for (std::size_t t = 0; t + l < v.size(); ++t) c += (v[t] - mean) * (v[t + l] - mean);
    EXPECT_NEAR(r.rho[l], c / c0, 1e-12);
  }
  EXPECT_THROW(autocorrelation(std::vector<double>(30, 0.0), 20), InsufficientData);
  const auto flat = autocorrelation(std::vector<double>(100, 0.25), 10);
  EXPECT_TRUE(flat.degenerate);
  EXPECT_THROW(fit_decay_rate(flat), InsufficientData);
}

TEST(DecayFit, RecoversGeometricRateExactly) {
  for (double tau : {0.01, 0.1, 0.5}) {
    std::vector<double> rho(201);
    for (std::size_t l = 0; l <= 200; ++l) rho[l] = 0.9 * std::exp(-tau * l);
    const auto f = fit_decay_rate(rho, 0.05);
    EXPECT_NEAR(f.rate, tau, 1e-10);
    EXPECT_NEAR(f.amplitude, 0.9, 1e-9);
    EXPECT_LT(f.residual, 1e-10);
    EXPECT_EQ(f.first_lag, 1u);
    EXPECT_EQ(f.slow_mixing, tau == 0.01);
  }
}

TEST(DecayFit, WindowStopsAtFirstDropBelowCutoff) {
  std::vector<double> rho{1.0, 0.8, 0.6, 0.45, 0.3, 0.04, 0.2, 0.1};
  const auto f = fit_decay_rate(rho, 0.05);
  EXPECT_EQ(f.last_lag, 4u);
  EXPECT_FALSE(f.slow_mixing);
  EXPECT_THROW(fit_decay_rate(std::vector<double>{1.0, 0.5, 0.2, 0.01, 0.3}, 0.05), InsufficientData);
  EXPECT_THROW(fit_decay_rate(rho, 0.0), InvalidArgument);
}

TEST(DecayFit, NonDecayingCurveClampsToZero) {
  std::vector<double> rho{1.0, 0.5, 0.55, 0.6, 0.65, 0.7};
  EXPECT_EQ(fit_decay_rate(rho).rate, 0.0);
}

TEST(DecayFit, Ar1RateWithinTenPercent) {
  for (double phi : {0.7, 0.9}) {
    const auto r = autocorrelation(ar1(phi, 400000, 3), 200);
    const auto f = fit_decay_rate(r, 0.05);
    EXPECT_NEAR(f.rate, -std::log(phi), 0.1 * -std::log(phi)) << "phi " << phi;
  }
}

TEST(Average, MeanAndSampleStd) {
  AutocorrResult a, b;
  a.rho = {1.0, 0.5};
  b.rho = {1.0, 0.3};
  const auto m = average_autocorrelation({a, b});
  EXPECT_DOUBLE_EQ(m.mean[1], 0.4);
  EXPECT_NEAR(m.std[1], std::sqrt(0.02), 1e-15);
  EXPECT_EQ(autocorr_csv(m).substr(0, 20), "lag,rho_mean,rho_std");
}

TEST(Ensemble, SummaryAndRatios) {
  std::map<std::string, std::vector<DecayFit>> fits;
  fits["a"] = {DecayFit{1.0, 0.2}, DecayFit{1.0, 0.4}};
  fits["b"] = {DecayFit{1.0, 0.1}};
  const auto s = ensemble_summary(fits);
  EXPECT_NEAR(s.kernel("a").tau_mean, 0.3, 1e-15);
  EXPECT_NEAR(s.kernel("a").tau_std, std::sqrt(0.02), 1e-15);
  EXPECT_EQ(s.kernel("b").tau_std, 0.0);
  EXPECT_NEAR(s.ratio("a", "b"), 3.0, 1e-12);
  EXPECT_THROW(s.ratio("a", "c"), InvalidArgument);
  EXPECT_NE(summary_csv(s).find("a,2,"), std::string::npos);
}

TEST(BestEnergy, RunningMinimum) {
  EXPECT_EQ(best_energy_trace(std::vector<double>{3, 1, 2, 0, 5}), (std::vector<double>{3, 1, 1, 0, 0}));
  EXPECT_THROW(best_energy_trace(std::vector<double>{}), InvalidArgument);
  EXPECT_EQ(burn_in_count(1001, 0.1), 100u);
}
