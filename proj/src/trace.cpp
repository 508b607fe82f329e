#include "amphibot/trace.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace amphibot {

Trace::Trace(std::vector<std::string> names) {
  for (auto& n : names) add_column(n);
}

std::size_t Trace::add_column(const std::string& name) {
  if (name.empty()) throw TraceError("trace column name is empty");
  if (lookup_.count(name)) throw TraceError("duplicate trace column: " + name);
  if (rows() != 0) throw TraceError("cannot add column '" + name + "' to a non-empty trace");
  lookup_[name] = names_.size();
  names_.push_back(name);
  cols_.emplace_back();
  return names_.size() - 1;
}

std::size_t Trace::index(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) throw TraceError("trace has no column '" + name + "'");
  return it->second;
}

void Trace::push_row(const std::vector<double>& values) {
  if (values.size() != cols_.size())
    throw TraceError("row has " + std::to_string(values.size()) + " values, trace has " +
                     std::to_string(cols_.size()) + " columns");
  for (std::size_t i = 0; i < values.size(); ++i) cols_[i].push_back(values[i]);
}

Trace Trace::slice(std::size_t first, std::size_t last) const {
  if (first > last || last > rows()) throw TraceError("trace slice out of range");
  Trace out(names_);
  for (std::size_t c = 0; c < cols_.size(); ++c)
    out.cols_[c].assign(cols_[c].begin() + static_cast<std::ptrdiff_t>(first),
                        cols_[c].begin() + static_cast<std::ptrdiff_t>(last));
  return out;
}

void Trace::write_csv(std::ostream& out, int digits) const {
  for (std::size_t c = 0; c < names_.size(); ++c) out << (c ? "," : "") << names_[c];
  out << '\n';
  std::string line;
  char buf[64];
  const std::size_t n = rows();
  for (std::size_t r = 0; r < n; ++r) {
    line.clear();
    for (std::size_t c = 0; c < cols_.size(); ++c) {
      if (c) line += ',';
      double v = cols_[c][r];
      if (v == 0.0) v = 0.0;  // no "-0"
      int len = std::snprintf(buf, sizeof buf, "%.*g", digits, v);
      line.append(buf, static_cast<std::size_t>(len));
    }
    line += '\n';
    out << line;
  }
}

Trace Trace::read_csv(std::istream& in) {
  std::string header;
  if (!std::getline(in, header) || header.empty()) throw TraceError("trace CSV is empty");
  if (!header.empty() && header.back() == '\r') header.pop_back();
  std::vector<std::string> names;
  {
    std::stringstream ss(header);
    std::string name;
    while (std::getline(ss, name, ',')) names.push_back(name);
  }
  Trace t(names);
  std::string line;
  std::vector<double> row(names.size());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t col = 0;
    const char* p = line.data();
    const char* end = p + line.size();
    while (true) {
      if (col >= names.size()) throw TraceError("trace CSV line " + std::to_string(lineno) + ": too many fields");
      const char* comma = std::find(p, end, ',');
      auto [ptr, ec] = std::from_chars(p, comma, row[col]);
      if (ec != std::errc() || ptr != comma)
        throw TraceError("trace CSV line " + std::to_string(lineno) + ", column '" + names[col] +
                         "': not a number");
      ++col;
      if (comma == end) break;
      p = comma + 1;
    }
    if (col != names.size())
      throw TraceError("trace CSV line " + std::to_string(lineno) + ": expected " + std::to_string(names.size()) +
                       " fields, got " + std::to_string(col));
    t.push_row(row);
  }
  return t;
}

}  // namespace amphibot
