#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ppk/data_model.hpp"
#include "ppk/harness.hpp"
#include "ppk/metrics.hpp"
#include "ppk/ppk_engine.hpp"

namespace ppk::io {

namespace detail {

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split(const std::string &line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_number(const std::string &cell, std::size_t line, const std::string &column) {
  double v = 0.0;
  const char *begin = cell.data();
  const char *end = begin + cell.size();
  const auto res = std::from_chars(begin, end, v);
  if (cell.empty() || res.ec != std::errc() || res.ptr != end) {
    fail(ErrorCode::MalformedCsv, "line " + std::to_string(line) + ", column '" + column +
                                      "': non-numeric cell '" + cell + "'");
  }
  return v;
}

inline std::string format(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Table {
  std::vector<std::string> header;
  std::map<std::string, std::size_t> index;
  std::vector<std::vector<double>> rows;
};

inline Table read_table(std::istream &in) {
  Table tab;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) break;
  }
  require(!trim(line).empty(), ErrorCode::MalformedCsv, "missing header row");
  tab.header = split(line);
  for (std::size_t j = 0; j < tab.header.size(); ++j) {
    require(!tab.index.count(tab.header[j]), ErrorCode::MalformedCsv,
            "duplicate column '" + tab.header[j] + "'");
    tab.index[tab.header[j]] = j;
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    require(cells.size() == tab.header.size(), ErrorCode::MalformedCsv,
            "line " + std::to_string(lineno) + ": expected " +
                std::to_string(tab.header.size()) + " cells, found " +
                std::to_string(cells.size()));
    std::vector<double> row(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      row[j] = parse_number(cells[j], lineno, tab.header[j]);
    }
    tab.rows.push_back(std::move(row));
  }
  return tab;
}

inline std::size_t column(const Table &tab, const std::string &name) {
  const auto it = tab.index.find(name);
  require(it != tab.index.end(), ErrorCode::MalformedCsv, "missing required column '" + name + "'");
  return it->second;
}

/// Columns x1, x2, ... in numeric order; at least x1 must exist.
inline std::vector<std::size_t> covariate_columns(const Table &tab) {
  std::vector<std::size_t> cols;
  cols.push_back(column(tab, "x1"));
  for (int j = 2;; ++j) {
    const auto it = tab.index.find("x" + std::to_string(j));
    if (it == tab.index.end()) break;
    cols.push_back(it->second);
  }
  return cols;
}

inline Matrix covariates(const Table &tab) {
  const auto cols = covariate_columns(tab);
  Matrix X(static_cast<Eigen::Index>(tab.rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < tab.rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = tab.rows[i][cols[j]];
    }
  }
  return X;
}

inline std::ifstream open_in(const std::string &path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::string &path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot open '" + path + "' for writing");
  return out;
}

}  // namespace detail

/// Training data: columns y, t, x1..xp required; an optional theta column
/// carries the true effect. Other columns are ignored.
inline Dataset parse_dataset(std::istream &in) {
  const auto tab = detail::read_table(in);
  const auto ycol = detail::column(tab, "y");
  const auto tcol = detail::column(tab, "t");
  Dataset d;
  d.X = detail::covariates(tab);
  const auto n = static_cast<Eigen::Index>(tab.rows.size());
  d.y.resize(n);
  d.t.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto &row = tab.rows[static_cast<std::size_t>(i)];
    d.y(i) = row[ycol];
    const double t = row[tcol];
    require(t == 0.0 || t == 1.0, ErrorCode::MalformedCsv,
            "row " + std::to_string(i + 1) + ": t must be 0 or 1");
    d.t(i) = static_cast<int>(t);
  }
  if (const auto it = tab.index.find("theta"); it != tab.index.end()) {
    Vector theta(n);
    for (Eigen::Index i = 0; i < n; ++i) theta(i) = tab.rows[static_cast<std::size_t>(i)][it->second];
    d.true_theta = theta;
  }
  return d;
}

inline Dataset read_csv(const std::string &path) {
  auto in = detail::open_in(path);
  return parse_dataset(in);
}

/// Covariates only (x1..xp); used for test files.
inline Matrix read_covariates(const std::string &path) {
  auto in = detail::open_in(path);
  return detail::covariates(detail::read_table(in));
}

inline void write_dataset(std::ostream &out, const Dataset &d) {
  out << "y,t";
  for (Eigen::Index j = 0; j < d.p(); ++j) out << ",x" << j + 1;
  if (d.true_theta) out << ",theta";
  out << '\n';
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    out << detail::format(d.y(i)) << ',' << d.t(i);
    for (Eigen::Index j = 0; j < d.p(); ++j) out << ',' << detail::format(d.X(i, j));
    if (d.true_theta) out << ',' << detail::format((*d.true_theta)(i));
    out << '\n';
  }
}

inline void write_dataset(const std::string &path, const Dataset &d) {
  auto out = detail::open_out(path);
  write_dataset(out, d);
}

inline void write_estimates(std::ostream &out, const PosteriorHTE &post, const Vector &scores,
                            const std::vector<int> &regions, double level = 0.95) {
  const auto m = post.mean.size();
  require(scores.size() == m && static_cast<Eigen::Index>(regions.size()) == m,
          ErrorCode::DimensionMismatch, "estimates, scores and regions differ in length");
  const double z = central_z(level);
  const Vector sd = post.sd();
  out << "row_id,propensity,region,theta_mean,theta_sd,ci_lo,ci_hi\n";
  for (Eigen::Index i = 0; i < m; ++i) {
    out << i + 1 << ',' << detail::format(scores(i)) << ',' << regions[static_cast<std::size_t>(i)]
        << ',' << detail::format(post.mean(i)) << ',' << detail::format(sd(i)) << ','
        << detail::format(post.mean(i) - z * sd(i)) << ','
        << detail::format(post.mean(i) + z * sd(i)) << '\n';
  }
}

inline void write_estimates(const std::string &path, const PosteriorHTE &post, const Vector &scores,
                            const std::vector<int> &regions, double level = 0.95) {
  auto out = detail::open_out(path);
  write_estimates(out, post, scores, regions, level);
}

inline void write_report(const std::string &path, const MetricsReport &report) {
  auto out = detail::open_out(path);
  out << to_json(report).dump(2) << '\n';
}

}  // namespace ppk::io
