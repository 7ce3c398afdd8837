#pragma once

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "dcqmc/io.hpp"
#include "dcqmc/ising.hpp"

namespace dcqmc {

// Instance file: {"n": N, "edges": [[i, j, Q_ij], ...], "linear": [...], "constant": c}

inline Json instance_to_json(const QuboInstance& inst) {
  Json edges = Json::array();
  for (const auto& e : inst.edges()) edges.push_back({e.i, e.j, e.q});
  return Json{{"n", inst.n()},
              {"edges", std::move(edges)},
              {"linear", std::vector<double>(inst.linear().begin(), inst.linear().end())},
              {"constant", inst.constant()}};
}

inline QuboInstance instance_from_json(const Json& j) {
  try {
    const auto n = j.at("n").get<std::size_t>();
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 3) throw FormatError("instance: edge entries must be [i, j, Q_ij]");
      edges.push_back({e[0].get<Index>(), e[1].get<Index>(), e[2].get<double>()});
    }
    auto linear = j.contains("linear") ? j.at("linear").get<std::vector<double>>() : std::vector<double>(n, 0.0);
    const double constant = j.value("constant", 0.0);
    return QuboInstance(n, std::move(edges), std::move(linear), constant);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("instance: ") + e.what());
  }
}

inline void save_instance(const std::filesystem::path& path, const QuboInstance& inst) {
  write_json_file(path, instance_to_json(inst));
}

inline QuboInstance load_instance(const std::filesystem::path& path) { return instance_from_json(read_json_file(path)); }

/// Dense upper-triangular coefficient matrix in CSV. The diagonal holds the
/// linear terms (x_i^2 = x_i); entries below the diagonal must be zero.
inline QuboInstance import_upper_triangular_csv(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError("coefficient CSV: cannot parse '" + cell + "'", line_start);
      }
    }
    rows.push_back(std::move(row));
  }
  const std::size_t n = rows.size();
  std::vector<Edge> edges;
  std::vector<double> linear(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != n)
      throw FormatError("coefficient CSV: row " + std::to_string(i) + " has " + std::to_string(rows[i].size()) +
                        " entries, expected " + std::to_string(n));
    for (std::size_t j = 0; j < n; ++j) {
      const double v = rows[i][j];
      if (j < i && v != 0.0) throw FormatError("coefficient CSV: nonzero entry below the diagonal");
      if (j == i) linear[i] = v;
      if (j > i && v != 0.0) edges.push_back({static_cast<Index>(i), static_cast<Index>(j), v});
    }
  }
  return QuboInstance(n, std::move(edges), std::move(linear), 0.0);
}

}  // namespace dcqmc
