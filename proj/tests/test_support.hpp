#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "hsrl/core.hpp"

namespace hsrl_test {

/// Deterministic test RNG; fixed-seed mt19937_64 everywhere so reruns are stable.
inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline hsrl::Matrix random_matrix(std::mt19937_64& g, int rows, int cols, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  hsrl::Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = u(g);
  return m;
}

inline double dot(const hsrl::Matrix& a, const hsrl::Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double frob(const hsrl::Matrix& a) { return std::sqrt(dot(a, a)); }

inline double frob_diff(const hsrl::Matrix& a, const hsrl::Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline double max_abs_diff(const hsrl::Matrix& a, const hsrl::Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_rel_diff(const hsrl::Matrix& a, const hsrl::Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-300});
    m = std::max(m, std::abs(a[i] - b[i]) / scale);
  }
  return m;
}

inline std::string temp_dir(const std::string& tag) {
  std::string d = "hsrl_test_" + tag;
  std::string cmd = "rm -rf " + d + " && mkdir -p " + d;
  if (std::system(cmd.c_str()) != 0) throw std::runtime_error("temp_dir failed");
  return d;
}

}  // namespace hsrl_test
