#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "klchol/ordering.hpp"
#include "klchol/sparsity.hpp"

namespace klchol {

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  return fields;
}

inline double parse_real(const std::string& s, const std::string& file, int lineno) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(file + ":" + std::to_string(lineno) + ": not a number: '" + s + "'");
  }
}

inline bool numeric_row(const std::vector<std::string>& fields) {
  for (const auto& f : fields) {
    try {
      std::size_t pos = 0;
      std::stod(f, &pos);
    } catch (const std::exception&) {
      return false;
    }
  }
  return !fields.empty();
}

}  // namespace detail

/// Points CSV: one point per row, d comma-separated coordinates, an
/// optional non-numeric header line.
inline Eigen::MatrixXd read_points_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  std::size_t d = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto fields = detail::split_csv_line(line);
    if (rows.empty() && d == 0 && !detail::numeric_row(fields)) continue;  // header
    if (d == 0) d = fields.size();
    if (fields.size() != d)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(d) + " fields, got " + std::to_string(fields.size()));
    std::vector<double> row(d);
    for (std::size_t c = 0; c < d; ++c) row[c] = detail::parse_real(fields[c], path, lineno);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(path + ": no data rows");
  Eigen::MatrixXd coords(rows.size(), d);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < d; ++c) coords(r, c) = rows[r][c];
  return coords;
}

/// Observations CSV: lines "index,value" with 1-based indices; optional
/// header. Every index in 1..n must appear exactly once.
inline Eigen::VectorXd read_observations_csv(const std::string& path, int n) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  Eigen::VectorXd y(n);
  std::vector<char> seen(n, 0);
  std::string line;
  int lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto fields = detail::split_csv_line(line);
    if (first && !detail::numeric_row(fields)) { first = false; continue; }
    first = false;
    if (fields.size() != 2)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected index,value");
    const double idx_real = detail::parse_real(fields[0], path, lineno);
    const int idx = static_cast<int>(idx_real);
    if (idx < 1 || idx > n || idx != idx_real)
      throw ParseError(path + ":" + std::to_string(lineno) + ": index out of range");
    if (seen[idx - 1])
      throw ParseError(path + ":" + std::to_string(lineno) + ": duplicate index");
    seen[idx - 1] = 1;
    y[idx - 1] = detail::parse_real(fields[1], path, lineno);
  }
  for (int i = 0; i < n; ++i)
    if (!seen[i]) throw ParseError(path + ": missing observation for index " + std::to_string(i + 1));
  return y;
}

/// One positive real per line (optional header): per-point noise
/// variances.
inline Eigen::VectorXd read_scalar_column_csv(const std::string& path, int n) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::vector<double> vals;
  std::string line;
  int lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto fields = detail::split_csv_line(line);
    if (first && !detail::numeric_row(fields)) { first = false; continue; }
    first = false;
    if (fields.size() != 1)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected one value per line");
    vals.push_back(detail::parse_real(fields[0], path, lineno));
  }
  if (static_cast<int>(vals.size()) != n)
    throw ParseError(path + ": expected " + std::to_string(n) + " values, got " +
                     std::to_string(vals.size()));
  return Eigen::Map<Eigen::VectorXd>(vals.data(), n);
}

inline void write_ordering_csv(const std::string& path, const Ordering& ordering) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open " + path + " for writing");
  out << "position,original_index,lengthscale\n";
  out << std::setprecision(17);
  for (int k = 0; k < ordering.size(); ++k)
    out << (k + 1) << ',' << (ordering.perm[k] + 1) << ','
        << ordering.lengthscales[ordering.perm[k]] << '\n';
}

inline Ordering read_ordering_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  Ordering ord;
  std::string line;
  int lineno = 0;
  bool first = true;
  std::vector<std::array<double, 3>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (first && !detail::numeric_row(fields)) { first = false; continue; }
    first = false;
    if (fields.size() != 3)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 3 fields");
    rows.push_back({detail::parse_real(fields[0], path, lineno),
                    detail::parse_real(fields[1], path, lineno),
                    detail::parse_real(fields[2], path, lineno)});
  }
  const int n = static_cast<int>(rows.size());
  ord.perm.assign(n, -1);
  ord.inv_perm.assign(n, -1);
  ord.lengthscales.assign(n, 0.0);
  for (const auto& r : rows) {
    const int pos = static_cast<int>(r[0]) - 1;
    const int idx = static_cast<int>(r[1]) - 1;
    if (pos < 0 || pos >= n || idx < 0 || idx >= n || ord.perm[pos] >= 0)
      throw ParseError(path + ": invalid ordering rows");
    ord.perm[pos] = idx;
    ord.inv_perm[idx] = pos;
    ord.lengthscales[idx] = r[2];
  }
  return ord;
}

/// Factor triplets: "i k value", 1-based elimination positions.
inline void write_factor_triplets(const std::string& path, const SparsityPattern& pattern,
                                  const std::vector<double>& values) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open " + path + " for writing");
  out << std::setprecision(17);
  for (int k = 0; k < pattern.cols(); ++k)
    for (int t = pattern.col_ptr[k]; t < pattern.col_ptr[k + 1]; ++t)
      out << (pattern.row_idx[t] + 1) << ' ' << (k + 1) << ' ' << values[t] << '\n';
}

struct TripletFile {
  SparsityPattern pattern;
  std::vector<double> values;
};

inline TripletFile read_factor_triplets(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::vector<std::vector<std::pair<int, double>>> cols;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    int i, k;
    double v;
    if (!(ss >> i >> k >> v))
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 'i k value'");
    if (i < 1 || k < 1 || i < k)
      throw ParseError(path + ":" + std::to_string(lineno) + ": invalid triplet");
    if (static_cast<int>(cols.size()) < std::max(i, k)) cols.resize(std::max(i, k));
    cols[k - 1].push_back({i - 1, v});
  }
  TripletFile out;
  std::vector<std::vector<int>> columns(cols.size());
  for (std::size_t k = 0; k < cols.size(); ++k) {
    std::sort(cols[k].begin(), cols[k].end());
    for (auto& [i, v] : cols[k]) columns[k].push_back(i);
  }
  out.pattern = SparsityPattern::from_columns(columns);
  out.values.reserve(out.pattern.nnz());
  for (auto& col : cols)
    for (auto& [i, v] : col) out.values.push_back(v);
  return out;
}

inline void write_pattern_triplets(const std::string& path, const SparsityPattern& pattern) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open " + path + " for writing");
  for (int j = 0; j < pattern.cols(); ++j)
    for (int t = pattern.col_ptr[j]; t < pattern.col_ptr[j + 1]; ++t)
      out << (pattern.row_idx[t] + 1) << ' ' << (j + 1) << '\n';
}

inline void write_supernodes(const std::string& path, const SupernodePartition& partition) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open " + path + " for writing");
  for (int s = 0; s < partition.size(); ++s) {
    const auto& sn = partition.supernodes[s];
    out << (s + 1) << ": parents=[";
    for (std::size_t a = 0; a < sn.parents.size(); ++a)
      out << (a ? "," : "") << (sn.parents[a] + 1);
    out << "] children=[";
    for (std::size_t a = 0; a < sn.children.size(); ++a)
      out << (a ? "," : "") << (sn.children[a] + 1);
    out << "]\n";
  }
}

inline void write_mean_sd_csv(const std::string& path, const Eigen::VectorXd& mean,
                              const Eigen::VectorXd& sd) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open " + path + " for writing");
  out << "index,mean,sd\n";
  out << std::setprecision(17);
  for (int i = 0; i < mean.size(); ++i)
    out << (i + 1) << ',' << mean[i] << ',' << sd[i] << '\n';
}

inline void write_dense_csv(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open " + path + " for writing");
  out << std::setprecision(17);
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) out << (c ? "," : "") << m(r, c);
    out << '\n';
  }
}

}  // namespace klchol
