#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "kmc/errors.hpp"
#include "kmc/features.hpp"
#include "kmc/samplers.hpp"
#include "kmc/score_matching.hpp"

namespace kmc {

// Shortest representation that round-trips a double exactly.
inline std::string format_double(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15) {
    char ibuf[32];
    std::snprintf(ibuf, sizeof(ibuf), "%.0f", v);
    return ibuf;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = 0.0;
  std::sscanf(buf, "%lf", &back);
  if (back == v) {
    for (int prec = 1; prec < 17; ++prec) {
      char shorter[32];
      std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
      std::sscanf(shorter, "%lf", &back);
      if (back == v) return shorter;
    }
  }
  return buf;
}

struct CsvTable {
  std::vector<std::string> header;
  Eigen::MatrixXd values;
};

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const Eigen::MatrixXd& values) {
  require_input(header.size() == static_cast<std::size_t>(values.cols()) || values.rows() == 0,
                "write_csv: header width mismatch");
  std::ofstream out(path);
  require_input(out.good(), "write_csv: cannot open " + path);
  for (std::size_t j = 0; j < header.size(); ++j)
    out << (j ? "," : "") << header[j];
  out << "\n";
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j)
      out << (j ? "," : "") << format_double(values(i, j));
    out << "\n";
  }
  require_input(out.good(), "write_csv: write failed for " + path);
}

// Header row required; parse failures report the 1-based line number.
inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  require_input(in.good(), "read_csv: cannot open " + path);
  CsvTable table;
  std::string line;
  require_input(static_cast<bool>(std::getline(in, line)), "read_csv: empty file " + path);
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) table.header.push_back(cell);
  }
  require_input(!table.header.empty(), "read_csv: empty header in " + path);

  std::vector<std::vector<double>> rows;
  long long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw InputError(path + ": parse error at line " + std::to_string(line_no) +
                         ": '" + cell + "'");
      }
    }
    if (row.size() != table.header.size())
      throw InputError(path + ": wrong column count at line " + std::to_string(line_no));
    rows.push_back(std::move(row));
  }
  table.values.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(table.header.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return table;
}

// --------------------------------------------------------------------------
// JSON helpers for vectors and matrices (exact double round-trip).
// --------------------------------------------------------------------------

inline nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline Eigen::VectorXd vec_from_json(const nlohmann::json& arr) {
  Eigen::VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] = arr[i];
  return v;
}

inline nlohmann::json mat_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_to_json(m.row(i)));
  return rows;
}

inline Eigen::MatrixXd mat_from_json(const nlohmann::json& rows) {
  if (rows.empty()) return Eigen::MatrixXd(0, 0);
  Eigen::MatrixXd m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    m.row(static_cast<Eigen::Index>(i)) = vec_from_json(rows[i]).transpose();
  return m;
}

// --------------------------------------------------------------------------
// Feature basis: (family, sigma, alpha, m, d, seed) fully determine the basis,
// so only those are stored and loading re-materialises identical frequencies.
// --------------------------------------------------------------------------

inline nlohmann::json basis_to_json(const FeatureBasis& basis) {
  return {{"family", basis.spec.family == KernelFamily::Gaussian ? "gaussian" : "rq"},
          {"sigma", basis.spec.sigma},
          {"alpha", basis.spec.alpha},
          {"m", basis.m},
          {"d", basis.d},
          {"seed", basis.seed}};
}

inline FeatureBasis basis_from_json(const nlohmann::json& j) {
  KernelSpec spec;
  const std::string family = j.at("family");
  require_input(family == "gaussian" || family == "rq", "basis: unknown kernel family");
  spec.family = family == "gaussian" ? KernelFamily::Gaussian : KernelFamily::RationalQuadratic;
  spec.sigma = j.at("sigma");
  spec.alpha = j.at("alpha");
  return sample_basis(spec, j.at("m"), j.at("d"), j.at("seed"));
}

inline void save_basis(const FeatureBasis& basis, const std::string& path) {
  std::ofstream out(path);
  require_input(out.good(), "save_basis: cannot open " + path);
  out << basis_to_json(basis).dump(2) << "\n";
}

inline FeatureBasis load_basis(const std::string& path) {
  std::ifstream in(path);
  require_input(in.good(), "load_basis: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw InputError("load_basis: " + path + ": " + e.what());
  }
  return basis_from_json(j);
}

// --------------------------------------------------------------------------
// Model files, version-tagged.
// --------------------------------------------------------------------------

inline void save_lite_model(const LiteModel& model, const std::string& path) {
  nlohmann::json j{{"format", "kmc-model"},
                   {"version", 1},
                   {"kind", "lite"},
                   {"sigma", model.spec.sigma},
                   {"lambda", model.lambda},
                   {"z", mat_to_json(model.Z)},
                   {"alpha", vec_to_json(model.alpha)}};
  std::ofstream out(path);
  require_input(out.good(), "save_lite_model: cannot open " + path);
  out << j.dump(2) << "\n";
}

inline void save_finite_model(const FiniteModel& model, const std::string& path) {
  nlohmann::json j{{"format", "kmc-model"},
                   {"version", 1},
                   {"kind", "finite"},
                   {"basis", basis_to_json(model.basis)},
                   {"lambda", model.lambda},
                   {"t", model.t},
                   {"theta", vec_to_json(model.theta)},
                   {"b_sum", vec_to_json(model.b_sum)},
                   {"c_chol", mat_to_json(model.C_chol)}};
  std::ofstream out(path);
  require_input(out.good(), "save_finite_model: cannot open " + path);
  out << j.dump(2) << "\n";
}

inline nlohmann::json load_model_json(const std::string& path) {
  std::ifstream in(path);
  require_input(in.good(), "load_model: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw InputError("load_model: " + path + ": " + e.what());
  }
  require_input(j.value("format", "") == "kmc-model", "load_model: not a model file");
  require_input(j.value("version", 0) == 1, "load_model: unsupported version");
  return j;
}

inline LiteModel load_lite_model(const std::string& path) {
  const nlohmann::json j = load_model_json(path);
  require_input(j.value("kind", "") == "lite", "load_lite_model: wrong model kind");
  LiteModel model;
  model.spec = KernelSpec{KernelFamily::Gaussian, j.at("sigma"), 1.0};
  model.lambda = j.at("lambda");
  model.Z = mat_from_json(j.at("z"));
  model.alpha = vec_from_json(j.at("alpha"));
  return model;
}

inline FiniteModel load_finite_model(const std::string& path) {
  const nlohmann::json j = load_model_json(path);
  require_input(j.value("kind", "") == "finite", "load_finite_model: wrong model kind");
  FiniteModel model = make_finite_model(basis_from_json(j.at("basis")), j.at("lambda"));
  model.t = j.at("t");
  model.theta = vec_from_json(j.at("theta"));
  model.b_sum = vec_from_json(j.at("b_sum"));
  model.C_chol = mat_from_json(j.at("c_chol"));
  // derived data summary: C_sum/t = L L^T - lambda I
  if (model.t > 0) {
    Eigen::MatrixXd ct = model.C_chol * model.C_chol.transpose();
    ct.diagonal().array() -= model.lambda;
    model.C_sum = static_cast<double>(model.t) * ct;
  }
  return model;
}

// --------------------------------------------------------------------------
// Chain CSV: one row per iteration.
// --------------------------------------------------------------------------

inline void write_chain_csv(const ChainResult& chain, const std::string& path) {
  const Eigen::Index T = chain.samples.rows();
  const Eigen::Index d = chain.samples.cols();
  Eigen::MatrixXd table(T, d + 5);
  table.leftCols(d) = chain.samples;
  for (Eigen::Index t = 0; t < T; ++t) {
    table(t, d) = chain.accepted[t] ? 1.0 : 0.0;
    table(t, d + 1) = chain.adapted[t] ? 1.0 : 0.0;
    table(t, d + 2) = chain.log_targets[t];
    table(t, d + 3) = chain.proposal_meta(t, 0);
    table(t, d + 4) = chain.proposal_meta(t, 1);
  }
  std::vector<std::string> header;
  for (Eigen::Index j = 0; j < d; ++j) header.push_back("x" + std::to_string(j + 1));
  header.insert(header.end(), {"accepted", "adapted", "log_target", "eps", "L"});
  write_csv(path, header, table);
}

}  // namespace kmc
