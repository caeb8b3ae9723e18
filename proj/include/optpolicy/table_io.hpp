#pragma once

#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "optpolicy/core_model.hpp"

namespace optpolicy {

// Comma-delimited table with a mandatory header row. Cells are trimmed;
// quoting is not supported.
struct Table {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t size() const { return rows.size(); }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return j;
    }
    return std::nullopt;
  }

  std::size_t require(const std::string& name) const {
    auto j = find(name);
    if (!j) throw InputError(source + ": missing column '" + name + "'");
    return *j;
  }

  // Row numbers in messages are 1-based file lines (header is line 1).
  double number(std::size_t row, std::size_t col) const {
    const std::string& cell = rows[row][col];
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
      throw InputError(source + ": non-numeric cell '" + cell + "' at line " + std::to_string(row + 2) +
                       ", column '" + header[col] + "'");
    }
    if (!std::isfinite(v)) {
      throw InputError(source + ": non-finite cell at line " + std::to_string(row + 2) + ", column '" +
                       header[col] + "'");
    }
    return v;
  }

  std::vector<double> numeric_column(const std::string& name) const {
    std::size_t j = require(name);
    std::vector<double> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = number(i, j);
    return out;
  }

  MatrixD numeric_columns(const std::vector<std::string>& names) const {
    std::vector<std::size_t> cols;
    std::vector<std::string> missing;
    for (const auto& n : names) {
      auto j = find(n);
      if (j) {
        cols.push_back(*j);
      } else {
        missing.push_back(n);
      }
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      throw InputError(source + ": missing columns: " + list);
    }
    MatrixD out(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t k = 0; k < cols.size(); ++k) out(i, k) = number(i, cols[k]);
    }
    return out;
  }

  std::vector<std::string> string_column(const std::string& name) const {
    std::size_t j = require(name);
    std::vector<std::string> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = rows[i][j];
    return out;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_line(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(delim, start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

inline Table parse_table(const std::string& text, const std::string& source = "<table>", char delim = ',') {
  Table t;
  t.source = source;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_line(line, delim);
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw InputError(source + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (!have_header) throw InputError(source + ": empty file, header row required");
  return t;
}

inline Table read_table(const std::string& path, char delim = ',') {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_table(ss.str(), path, delim);
}

// Shortest representation that round-trips.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline void write_table(std::ostream& out, const std::vector<std::string>& header,
                        const std::vector<std::vector<std::string>>& rows) {
  auto write_row = [&](const std::vector<std::string>& cells) {
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (j) out << ',';
      out << cells[j];
    }
    out << '\n';
  };
  write_row(header);
  for (const auto& r : rows) write_row(r);
}

inline void write_table(const std::string& path, const std::vector<std::string>& header,
                        const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  write_table(out, header, rows);
}

// Reward tables: header of candidate labels, one row per observation.
inline void write_reward_table(std::ostream& out, const RewardMatrix& rewards) {
  std::vector<std::vector<std::string>> rows(rewards.rows());
  for (std::size_t i = 0; i < rewards.rows(); ++i) {
    rows[i].reserve(rewards.num_treatments());
    for (std::size_t t = 0; t < rewards.num_treatments(); ++t) rows[i].push_back(format_double(rewards.values(i, t)));
  }
  write_table(out, rewards.labels, rows);
}

inline void write_reward_table(const std::string& path, const RewardMatrix& rewards) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  write_reward_table(out, rewards);
}

inline RewardMatrix reward_matrix_from_table(const Table& t) {
  MatrixD values = t.numeric_columns(t.header);
  return RewardMatrix(std::move(values), t.header);
}

inline RewardMatrix read_reward_table(const std::string& path) { return reward_matrix_from_table(read_table(path)); }

}  // namespace optpolicy
