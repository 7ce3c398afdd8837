#pragma once

// Mixing diagnostics: overlap between paired chains, its autocorrelation,
// exponential decay-rate fits and best-energy traces.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dcqmc/errors.hpp"
#include "dcqmc/mcmc.hpp"

namespace dcqmc {

struct OverlapSeries {
  std::vector<double> values;
  std::size_t n_sites = 0;
};

struct AutocorrResult {
  std::vector<double> rho;  // rho[l] for l = 0..max_lag
  double mean_q = 0.0;
  double var_q = 0.0;
  bool degenerate = false;  // constant series; rho is all zero except rho[0]
};

struct DecayFit {
  double amplitude = 0.0;  // A in A exp(-tau l)
  double rate = 0.0;       // tau
  std::size_t first_lag = 0;
  std::size_t last_lag = 0;
  double residual = 0.0;     // RMS of the log-domain error
  bool slow_mixing = false;  // the window ran to the largest available lag
};

/// q(t) = popcount(x(t) AND x'(t)) / N over snapshots first..end.
inline OverlapSeries overlap_series(const ChainTrace& a, const ChainTrace& b, std::size_t first = 0) {
  if (a.n != b.n) throw InvalidArgument("overlap_series: traces have different N");
  if (a.configs.size() != b.configs.size()) throw InvalidArgument("overlap_series: traces have different lengths");
  if (first > a.configs.size()) throw InvalidArgument("overlap_series: burn-in exceeds trace length");
  OverlapSeries s;
  s.n_sites = a.n;
  s.values.reserve(a.configs.size() - first);
  const double inv_n = 1.0 / static_cast<double>(a.n);
  for (std::size_t t = first; t < a.configs.size(); ++t) {
    const auto ra = a.configs.row(t), rb = b.configs.row(t);
    std::size_t common = 0;
    for (std::size_t w = 0; w < ra.size(); ++w) common += static_cast<std::size_t>(std::popcount(ra[w] & rb[w]));
    s.values.push_back(static_cast<double>(common) * inv_n);
  }
  return s;
}

/// Number of leading snapshots dropped for a burn-in fraction.
inline std::size_t burn_in_count(std::size_t snapshots, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw InvalidArgument("burn-in fraction must lie in [0, 1)");
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(snapshots)));
}

/// Biased estimator: covariance at lag l summed over T-l pairs, divided by T,
/// then normalised by the lag-0 value.
inline AutocorrResult autocorrelation(const std::vector<double>& series, std::size_t max_lag) {
  const std::size_t T = series.size();
  if (T <= max_lag + 10)
    throw InsufficientData("autocorrelation: series length " + std::to_string(T) + " must exceed max_lag + 10");
  AutocorrResult r;
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= static_cast<double>(T);
  std::vector<double> centred(T);
  for (std::size_t t = 0; t < T; ++t) centred[t] = series[t] - mean;
  double c0 = 0.0;
  for (double v : centred) c0 += v * v;
  c0 /= static_cast<double>(T);
  r.mean_q = mean;
  r.var_q = c0;
  r.rho.assign(max_lag + 1, 0.0);
  r.rho[0] = 1.0;
  if (!(c0 > 0.0)) {
    r.degenerate = true;
    return r;
  }
  for (std::size_t l = 1; l <= max_lag; ++l) {
    double c = 0.0;
    for (std::size_t t = 0; t + l < T; ++t) c += centred[t] * centred[t + l];
    r.rho[l] = c / static_cast<double>(T) / c0;
  }
  return r;
}

inline AutocorrResult autocorrelation(const OverlapSeries& s, std::size_t max_lag) {
  return autocorrelation(s.values, max_lag);
}

/// Weighted least squares of log rho(l) on l over the contiguous run of lags
/// l >= 1 with rho(l) > cutoff. Weights are rho(l)^2.
inline DecayFit fit_decay_rate(const std::vector<double>& rho, double cutoff = 0.05) {
  if (!(cutoff > 0.0 && cutoff < 1.0)) throw InvalidArgument("fit_decay_rate: cutoff must lie in (0, 1)");
  std::size_t last = 0;
  while (last + 1 < rho.size() && rho[last + 1] > cutoff) ++last;
  const std::size_t used = last;  // lags 1..last
  if (used < 4)
    throw InsufficientData("fit_decay_rate: only " + std::to_string(used) + " lags above cutoff, need at least 4");
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t l = 1; l <= last; ++l) {
    const double w = rho[l] * rho[l], x = static_cast<double>(l), y = std::log(rho[l]);
    sw += w;
    sx += w * x;
    sy += w * y;
    sxx += w * x * x;
    sxy += w * x * y;
  }
  const double mx = sx / sw, my = sy / sw;
  const double slope = (sxy / sw - mx * my) / (sxx / sw - mx * mx);
  const double intercept = my - slope * mx;
  DecayFit f;
  f.rate = std::max(0.0, -slope);
  f.amplitude = std::exp(intercept);
  f.first_lag = 1;
  f.last_lag = last;
  double ss = 0.0;
  for (std::size_t l = 1; l <= last; ++l) {
    const double e = std::log(rho[l]) - (intercept + slope * static_cast<double>(l));
    ss += e * e;
  }
  f.residual = std::sqrt(ss / static_cast<double>(used));
  f.slow_mixing = last + 1 == rho.size();
  return f;
}

inline DecayFit fit_decay_rate(const AutocorrResult& ac, double cutoff = 0.05) {
  if (ac.degenerate) throw InsufficientData("fit_decay_rate: degenerate (constant) overlap series");
  return fit_decay_rate(ac.rho, cutoff);
}

/// Lag-wise mean and standard deviation of several autocorrelation curves.
struct MeanAutocorr {
  std::vector<double> mean;
  std::vector<double> std;
};

inline MeanAutocorr average_autocorrelation(const std::vector<AutocorrResult>& runs) {
  if (runs.empty()) throw InvalidArgument("average_autocorrelation: no runs");
  const std::size_t L = runs.front().rho.size();
  MeanAutocorr m{std::vector<double>(L, 0.0), std::vector<double>(L, 0.0)};
  for (const auto& r : runs) {
    if (r.rho.size() != L) throw InvalidArgument("average_autocorrelation: runs have different max_lag");
    for (std::size_t l = 0; l < L; ++l) m.mean[l] += r.rho[l];
  }
  const double n = static_cast<double>(runs.size());
  for (auto& v : m.mean) v /= n;
  if (runs.size() > 1) {
    for (const auto& r : runs)
      for (std::size_t l = 0; l < L; ++l) m.std[l] += (r.rho[l] - m.mean[l]) * (r.rho[l] - m.mean[l]);
    for (auto& v : m.std) v = std::sqrt(v / (n - 1.0));
  }
  return m;
}

/// Running minimum of the per-step energies.
inline std::vector<double> best_energy_trace(const std::vector<double>& energies) {
  if (energies.empty()) throw InvalidArgument("best_energy_trace: empty trace");
  std::vector<double> best(energies.size());
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < energies.size(); ++t) best[t] = m = std::min(m, energies[t]);
  return best;
}

inline std::vector<double> best_energy_trace(const ChainTrace& t) { return best_energy_trace(t.energies); }

struct KernelSummary {
  std::string kernel;
  std::size_t runs = 0;
  double tau_mean = 0.0;
  double tau_std = 0.0;  // sample standard deviation; 0 for a single run
};

struct RateRatio {
  std::string numerator;
  std::string denominator;
  double ratio = 0.0;  // tau_mean(numerator) / tau_mean(denominator)
};

struct EnsembleSummary {
  std::vector<KernelSummary> kernels;
  std::vector<RateRatio> ratios;

  const KernelSummary& kernel(const std::string& name) const {
    for (const auto& k : kernels)
      if (k.kernel == name) return k;
    throw InvalidArgument("ensemble summary has no kernel '" + name + "'");
  }
  double ratio(const std::string& num, const std::string& den) const {
    for (const auto& r : ratios)
      if (r.numerator == num && r.denominator == den) return r.ratio;
    throw InvalidArgument("ensemble summary has no ratio " + num + "/" + den);
  }
};

inline EnsembleSummary ensemble_summary(const std::map<std::string, std::vector<DecayFit>>& fits) {
  EnsembleSummary s;
  for (const auto& [name, list] : fits) {
    if (list.empty()) throw InvalidArgument("ensemble_summary: kernel '" + name + "' has no fits");
    KernelSummary k;
    k.kernel = name;
    k.runs = list.size();
    for (const auto& f : list) k.tau_mean += f.rate;
    k.tau_mean /= static_cast<double>(list.size());
    if (list.size() > 1) {
      double ss = 0.0;
      for (const auto& f : list) ss += (f.rate - k.tau_mean) * (f.rate - k.tau_mean);
      k.tau_std = std::sqrt(ss / static_cast<double>(list.size() - 1));
    }
    s.kernels.push_back(k);
  }
  for (const auto& a : s.kernels)
    for (const auto& b : s.kernels)
      if (a.kernel != b.kernel)
        s.ratios.push_back({a.kernel, b.kernel,
                            b.tau_mean > 0.0 ? a.tau_mean / b.tau_mean : std::numeric_limits<double>::infinity()});
  return s;
}

inline std::string autocorr_csv(const MeanAutocorr& m) {
  std::ostringstream os;
  os.precision(17);
  os << "lag,rho_mean,rho_std\n";
  for (std::size_t l = 0; l < m.mean.size(); ++l) os << l << ',' << m.mean[l] << ',' << m.std[l] << '\n';
  return os.str();
}

inline std::string summary_csv(const EnsembleSummary& s) {
  std::ostringstream os;
  os.precision(17);
  os << "kernel,runs,tau_mean,tau_std\n";
  for (const auto& k : s.kernels) os << k.kernel << ',' << k.runs << ',' << k.tau_mean << ',' << k.tau_std << '\n';
  return os.str();
}

inline std::string best_energy_csv(const std::vector<double>& best) {
  std::ostringstream os;
  os.precision(17);
  os << "step,best_energy\n";
  for (std::size_t t = 0; t < best.size(); ++t) os << t << ',' << best[t] << '\n';
  return os.str();
}

}  // namespace dcqmc
