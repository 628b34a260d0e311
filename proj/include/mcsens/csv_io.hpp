#pragma once

// Plain-text matrix format for kernels, functions, measures and weights.
//
//   line 1: comma-separated state labels
//   then:   one row of values for functions/measures/weights,
//           one row per source state (in label order) for kernels.
//
// Values are printed with 17 significant digits, which round-trips every
// finite double exactly through strtod.

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mcsens/kernel_algebra.hpp"

namespace mcsens::csv {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') throw SchemaError("bad numeric field '" + s + "'");
  return v;
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    out.push_back(field);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

namespace detail {

inline void write_header(std::ostream& os, const StateSpace& space) {
  for (std::size_t i = 0; i < space.size(); ++i) os << (i ? "," : "") << space.label(i);
  os << '\n';
}

inline void write_row(std::ostream& os, const Eigen::Ref<const Vector>& row) {
  for (Eigen::Index i = 0; i < row.size(); ++i) os << (i ? "," : "") << format_double(row(i));
  os << '\n';
}

inline std::vector<std::vector<double>> read_rows(std::istream& is, std::size_t width) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    auto fields = split_line(line);
    if (fields.size() != width) {
      throw DimensionError("csv row has " + std::to_string(fields.size()) + " fields, expected " +
                           std::to_string(width));
    }
    std::vector<double> row;
    row.reserve(width);
    for (const auto& f : fields) row.push_back(parse_double(f));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline StateSpace read_header(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw SchemaError("csv is empty");
  return StateSpace(split_line(line));
}

inline Vector read_vector(std::istream& is, StateSpace& space) {
  space = read_header(is);
  auto rows = read_rows(is, space.size());
  if (rows.size() != 1) throw DimensionError("vector csv must have exactly one data row");
  Vector v(static_cast<Eigen::Index>(space.size()));
  for (std::size_t i = 0; i < space.size(); ++i) v(static_cast<Eigen::Index>(i)) = rows[0][i];
  return v;
}

}  // namespace detail

inline void write(std::ostream& os, const StateSpace& space, const FiniteKernel& k) {
  mcsens::detail::require_same_size(space.size(), k.size(), "csv kernel");
  detail::write_header(os, space);
  for (Eigen::Index r = 0; r < k.entries().rows(); ++r) detail::write_row(os, k.entries().row(r).transpose());
}

inline void write(std::ostream& os, const StateSpace& space, const FiniteFunction& h) {
  mcsens::detail::require_same_size(space.size(), h.size(), "csv function");
  detail::write_header(os, space);
  detail::write_row(os, h.values());
}

inline void write(std::ostream& os, const StateSpace& space, const FiniteMeasure& eta) {
  mcsens::detail::require_same_size(space.size(), eta.size(), "csv measure");
  detail::write_header(os, space);
  detail::write_row(os, eta.weights());
}

inline void write(std::ostream& os, const StateSpace& space, const WeightFunction& w) {
  mcsens::detail::require_same_size(space.size(), w.size(), "csv weight");
  detail::write_header(os, space);
  detail::write_row(os, w.values());
}

// Signed kernels load as signed; pass signed_kernel = false to enforce nonnegativity.
inline FiniteKernel read_kernel(std::istream& is, StateSpace* space_out = nullptr,
                                bool signed_kernel = true) {
  StateSpace space = detail::read_header(is);
  auto rows = detail::read_rows(is, space.size());
  if (rows.size() != space.size()) {
    throw DimensionError("kernel csv has " + std::to_string(rows.size()) + " rows for " +
                         std::to_string(space.size()) + " states");
  }
  Matrix m(static_cast<Eigen::Index>(space.size()), static_cast<Eigen::Index>(space.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  if (space_out) *space_out = space;
  return signed_kernel ? FiniteKernel::signed_kernel(std::move(m)) : FiniteKernel::nonnegative(std::move(m));
}

inline FiniteFunction read_function(std::istream& is, StateSpace* space_out = nullptr) {
  StateSpace space = StateSpace::indexed(1);
  Vector v = detail::read_vector(is, space);
  if (space_out) *space_out = space;
  return FiniteFunction(std::move(v));
}

inline FiniteMeasure read_measure(std::istream& is, StateSpace* space_out = nullptr) {
  StateSpace space = StateSpace::indexed(1);
  Vector v = detail::read_vector(is, space);
  if (space_out) *space_out = space;
  return FiniteMeasure(std::move(v));
}

inline WeightFunction read_weight(std::istream& is, StateSpace* space_out = nullptr) {
  StateSpace space = StateSpace::indexed(1);
  Vector v = detail::read_vector(is, space);
  if (space_out) *space_out = space;
  return WeightFunction(std::move(v));
}

}  // namespace mcsens::csv
