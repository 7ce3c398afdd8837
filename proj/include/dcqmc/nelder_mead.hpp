#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

namespace dcqmc {

struct NelderMeadOptions {
  std::size_t max_evaluations = 2000;
  double value_tolerance = 1e-6;  // stop when max f - min f over the simplex falls below this
  double initial_step = 0.2;
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  std::size_t evaluations = 0;
  bool converged = false;
};

/// Derivative-free simplex minimisation with the standard coefficients
/// (reflect 1, expand 2, contract 1/2, shrink 1/2).
inline NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                    std::vector<double> start, const NelderMeadOptions& opt = {}) {
  const std::size_t dim = start.size();
  NelderMeadResult result;
  std::vector<std::vector<double>> simplex(dim + 1, start);
  std::vector<double> values(dim + 1);
  for (std::size_t d = 0; d < dim; ++d) simplex[d + 1][d] += opt.initial_step;
  for (std::size_t v = 0; v <= dim; ++v) {
    values[v] = f(simplex[v]);
    ++result.evaluations;
  }
  std::vector<std::size_t> order(dim + 1);
  std::vector<double> centroid(dim), trial(dim), trial2(dim);
  auto point = [&](double t, std::vector<double>& out, const std::vector<double>& worst) {
    for (std::size_t d = 0; d < dim; ++d) out[d] = centroid[d] + t * (worst[d] - centroid[d]);
  };

  while (true) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[dim - (dim > 0 ? 1 : 0)];
    if (values[worst] - values[best] < opt.value_tolerance) {
      result.converged = true;
      break;
    }
    if (result.evaluations >= opt.max_evaluations || dim == 0) break;

    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (std::size_t v = 0; v <= dim; ++v)
      if (v != worst)
        for (std::size_t d = 0; d < dim; ++d) centroid[d] += simplex[v][d] / static_cast<double>(dim);

    point(-1.0, trial, simplex[worst]);
    const double f_reflect = f(trial);
    ++result.evaluations;
    if (f_reflect < values[best]) {
      point(-2.0, trial2, simplex[worst]);
      const double f_expand = f(trial2);
      ++result.evaluations;
      if (f_expand < f_reflect) {
        simplex[worst] = trial2;
        values[worst] = f_expand;
      } else {
        simplex[worst] = trial;
        values[worst] = f_reflect;
      }
      continue;
    }
    if (f_reflect < values[second]) {
      simplex[worst] = trial;
      values[worst] = f_reflect;
      continue;
    }
    const bool outside = f_reflect < values[worst];
    point(outside ? -0.5 : 0.5, trial2, simplex[worst]);
    const double f_contract = f(trial2);
    ++result.evaluations;
    if (f_contract < (outside ? f_reflect : values[worst])) {
      simplex[worst] = trial2;
      values[worst] = f_contract;
      continue;
    }
    for (std::size_t v = 0; v <= dim; ++v) {
      if (v == best) continue;
      for (std::size_t d = 0; d < dim; ++d) simplex[v][d] = simplex[best][d] + 0.5 * (simplex[v][d] - simplex[best][d]);
      values[v] = f(simplex[v]);
      ++result.evaluations;
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
  result.x = simplex[best];
  result.value = values[best];
  return result;
}

}  // namespace dcqmc
