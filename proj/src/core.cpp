#include "hsrl/core.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hsrl {

void Grid::validate() const {
  if (n_range <= 0 || n_profiles <= 0)
    fail(ErrorCode::invalid_argument, "grid dimensions must be positive");
  if (!(dr > 0.0) || !(dt > 0.0))
    fail(ErrorCode::invalid_argument, "grid bin widths must be positive");
}

Matrix::Matrix(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
  // Empty matrices are legal values (e.g. dual fields of a one-row image);
  // grid-tied types enforce positive shapes separately.
  if (rows < 0 || cols < 0) fail(ErrorCode::invalid_argument, "matrix dimensions must be nonnegative");
}

const char* channel_name(Channel c) { return c == Channel::combined ? "combined" : "molecular"; }

namespace {

void check_shape(const Grid& g, const Matrix& m, const char* what) {
  g.validate();
  if (m.rows() != g.n_range || m.cols() != g.n_profiles)
    fail(ErrorCode::invalid_argument, std::string(what) + ": matrix shape does not match grid");
}

}  // namespace

EnergyImage::EnergyImage(Grid g, Channel ch, Matrix v) : grid(g), channel(ch), values(std::move(v)) {
  check_shape(grid, values, "EnergyImage");
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!(values[i] > 0.0) || !std::isfinite(values[i]))
      fail(ErrorCode::invalid_argument, "EnergyImage values must be finite and strictly positive");
}

PhotonImage::PhotonImage(Grid g, Channel ch, Matrix c) : grid(g), channel(ch), counts(std::move(c)) {
  check_shape(grid, counts, "PhotonImage");
  for (std::size_t i = 0; i < counts.size(); ++i) {
    double y = counts[i];
    if (!std::isfinite(y) || y < 0.0 || std::floor(y) != y)
      fail(ErrorCode::invalid_argument, "PhotonImage counts must be nonnegative integers");
  }
}

ScatterScene::ScatterScene(Grid g, Matrix nu_, Matrix beta_, Matrix rho_)
    : grid(g), nu(std::move(nu_)), beta(std::move(beta_)), rho(std::move(rho_)) {
  check_shape(grid, nu, "ScatterScene.nu");
  check_shape(grid, beta, "ScatterScene.beta");
  check_shape(grid, rho, "ScatterScene.rho");
  for (std::size_t i = 0; i < nu.size(); ++i) {
    if (!std::isfinite(nu[i]) || nu[i] < 0.0)
      fail(ErrorCode::invalid_argument, "ScatterScene.nu must be finite and nonnegative");
    if (!std::isfinite(beta[i]) || beta[i] < 0.0)
      fail(ErrorCode::invalid_argument, "ScatterScene.beta must be finite and nonnegative");
    if (!std::isfinite(rho[i]) || rho[i] < 0.0 || rho[i] >= 1.0)
      fail(ErrorCode::invalid_argument, "ScatterScene.rho must lie in [0, 1)");
  }
}

Matrix ScatterScene::nu_plus() const {
  Matrix out = nu;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = nu[i] / (1.0 - rho[i]);
  return out;
}

Matrix ScatterScene::mu() const {
  Matrix out = nu;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = nu[i] > 0.0 ? (1.0 - rho[i]) * beta[i] / nu[i] : kInvalid;
  return out;
}

Matrix ScatterScene::optical_depth() const { return cumulative_integral(beta, grid.dr); }

Calibration::Calibration(Grid g, Matrix c_g_, Matrix c_mc_, Matrix c_mm_, Matrix b_c_, Matrix b_m_,
                         double c_am_)
    : grid(g),
      c_g(std::move(c_g_)),
      c_mc(std::move(c_mc_)),
      c_mm(std::move(c_mm_)),
      b_c(std::move(b_c_)),
      b_m(std::move(b_m_)),
      c_am(c_am_) {
  check_shape(grid, c_g, "Calibration.c_g");
  check_shape(grid, c_mc, "Calibration.c_mc");
  check_shape(grid, c_mm, "Calibration.c_mm");
  check_shape(grid, b_c, "Calibration.b_c");
  check_shape(grid, b_m, "Calibration.b_m");
  if (!std::isfinite(c_am) || c_am < 0.0 || c_am >= 1.0)
    fail(ErrorCode::invalid_argument, "Calibration.c_am must lie in [0, 1)");
  for (std::size_t i = 0; i < c_g.size(); ++i) {
    if (!(c_g[i] > 0.0) || !std::isfinite(c_g[i]))
      fail(ErrorCode::invalid_argument, "Calibration.c_g must be strictly positive");
    if (!(c_mc[i] >= 0.0) || !std::isfinite(c_mc[i]))
      fail(ErrorCode::invalid_argument, "Calibration.c_mc must be nonnegative");
    if (!(c_mm[i] > 0.0) || !std::isfinite(c_mm[i]))
      fail(ErrorCode::invalid_argument, "Calibration.c_mm must be strictly positive");
    if (c_mc[i] * c_am - c_mm[i] == 0.0)
      fail(ErrorCode::invalid_argument, "Calibration must satisfy c_mc*c_am != c_mm everywhere");
    if (!std::isfinite(b_c[i]) || b_c[i] < 0.0 || !std::isfinite(b_m[i]) || b_m[i] < 0.0)
      fail(ErrorCode::invalid_argument, "Calibration backgrounds must be nonnegative");
  }
}

Matrix cumulative_integral(const Matrix& field, double dr) {
  if (!(dr > 0.0)) fail(ErrorCode::invalid_argument, "cumulative_integral: dr must be positive");
  Matrix out(field.rows(), field.cols());
  for (int k = 0; k < field.cols(); ++k) {
    double acc = 0.0;
    for (int n = 0; n < field.rows(); ++n) {
      acc += field(n, k);
      out(n, k) = dr * acc;
    }
  }
  return out;
}

Matrix adjoint_cumulative_integral(const Matrix& field, double dr) {
  if (!(dr > 0.0)) fail(ErrorCode::invalid_argument, "adjoint_cumulative_integral: dr must be positive");
  Matrix out(field.rows(), field.cols());
  for (int k = 0; k < field.cols(); ++k) {
    double acc = 0.0;
    for (int n = field.rows() - 1; n >= 0; --n) {
      acc += field(n, k);
      out(n, k) = dr * acc;
    }
  }
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_matrix_csv(const std::string& path, const Grid& grid, const Matrix& values) {
  grid.validate();
  if (values.rows() != grid.n_range || values.cols() != grid.n_profiles)
    fail(ErrorCode::invalid_argument, "write_matrix_csv: matrix shape does not match grid");
  std::ofstream f(path);
  if (!f) fail(ErrorCode::io_failure, "cannot open for writing: " + path);
  f << "# rows=" << grid.n_range << " cols=" << grid.n_profiles << " dr=" << format_double(grid.dr)
    << " dt=" << format_double(grid.dt) << "\n";
  for (int n = 0; n < values.rows(); ++n) {
    for (int k = 0; k < values.cols(); ++k) {
      if (k) f << ',';
      f << format_double(values(n, k));
    }
    f << '\n';
  }
  if (!f.good()) fail(ErrorCode::io_failure, "write failed: " + path);
}

Image read_matrix_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::io_failure, "cannot open for reading: " + path);
  std::string line;
  if (!std::getline(f, line)) fail(ErrorCode::io_failure, "empty matrix file: " + path);
  Grid grid;
  if (std::sscanf(line.c_str(), "# rows=%d cols=%d dr=%lf dt=%lf", &grid.n_range, &grid.n_profiles,
                  &grid.dr, &grid.dt) != 4)
    fail(ErrorCode::io_failure, "malformed matrix header in " + path);
  grid.validate();
  Matrix values(grid.n_range, grid.n_profiles);
  for (int n = 0; n < grid.n_range; ++n) {
    if (!std::getline(f, line)) fail(ErrorCode::io_failure, "truncated matrix file: " + path);
    const char* p = line.c_str();
    char* end = nullptr;
    for (int k = 0; k < grid.n_profiles; ++k) {
      values(n, k) = std::strtod(p, &end);
      if (end == p) fail(ErrorCode::io_failure, "bad value in " + path);
      p = end;
      if (k + 1 < grid.n_profiles) {
        if (*p != ',') fail(ErrorCode::io_failure, "expected comma in " + path);
        ++p;
      }
    }
  }
  return Image{grid, std::move(values)};
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void write_key_values(const std::string& path, const KeyValues& kv) {
  std::ofstream f(path);
  if (!f) fail(ErrorCode::io_failure, "cannot open for writing: " + path);
  for (const auto& [k, v] : kv) f << k << " = " << v << "\n";
  if (!f.good()) fail(ErrorCode::io_failure, "write failed: " + path);
}

KeyValues read_key_values(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::io_failure, "cannot open for reading: " + path);
  KeyValues kv;
  std::string line;
  while (std::getline(f, line)) {
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::io_failure, "expected 'key = value' in " + path);
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

const std::string* find_key(const KeyValues& kv, const std::string& key) {
  for (const auto& [k, v] : kv)
    if (k == key) return &v;
  return nullptr;
}

std::string require_key(const KeyValues& kv, const std::string& key, const std::string& context) {
  const std::string* v = find_key(kv, key);
  if (!v) fail(ErrorCode::invalid_argument, context + ": missing key '" + key + "'");
  return *v;
}

double require_double(const KeyValues& kv, const std::string& key, const std::string& context) {
  std::string s = require_key(kv, key, context);
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    fail(ErrorCode::invalid_argument, context + ": key '" + key + "' is not a number");
  return v;
}

int require_int(const KeyValues& kv, const std::string& key, const std::string& context) {
  double v = require_double(kv, key, context);
  int i = static_cast<int>(v);
  if (static_cast<double>(i) != v)
    fail(ErrorCode::invalid_argument, context + ": key '" + key + "' is not an integer");
  return i;
}

}  // namespace hsrl
