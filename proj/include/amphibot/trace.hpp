#pragma once

// Column-major numeric table with a fixed time base, written as wide CSV.

#include <cstddef>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "amphibot/vec3.hpp"

namespace amphibot {

class TraceError : public Error {
public:
  using Error::Error;
};

class Trace {
public:
  Trace() = default;
  explicit Trace(std::vector<std::string> names);

  std::size_t add_column(const std::string& name);
  std::size_t index(const std::string& name) const;
  bool has(const std::string& name) const { return lookup_.count(name) != 0; }

  /// Appends one row; `values` must have one entry per column.
  void push_row(const std::vector<double>& values);

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<double>& column(const std::string& name) const { return cols_[index(name)]; }
  const std::vector<double>& column(std::size_t i) const { return cols_.at(i); }
  std::size_t rows() const { return cols_.empty() ? 0 : cols_[0].size(); }
  std::size_t cols() const { return cols_.size(); }

  /// Rows [first, last) as a new trace.
  Trace slice(std::size_t first, std::size_t last) const;

  /// `%.*g` with `digits` significant digits; identical inputs give identical bytes.
  void write_csv(std::ostream& out, int digits = 9) const;
  static Trace read_csv(std::istream& in);

private:
  std::vector<std::string> names_;
  std::vector<std::vector<double>> cols_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

}  // namespace amphibot
