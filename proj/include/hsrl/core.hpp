#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hsrl {

enum class ErrorCode {
  invalid_argument,
  io_failure,
  numeric_failure,
  infeasible,
  not_converged,
};

/// Library error type; every throwing path uses it so callers (and the C API)
/// can map failures to stable codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

/// Invalid pixels are quiet NaN; they propagate through arithmetic and are
/// excluded explicitly by filters and metrics.
constexpr double kInvalid = std::numeric_limits<double>::quiet_NaN();
inline bool is_invalid(double x) { return std::isnan(x); }

/// Uniform range/time raster: n_range rows (axis 0, range bins of width dr
/// meters) by n_profiles columns (axis 1, profiles dt seconds apart).
struct Grid {
  int n_range = 0;
  int n_profiles = 0;
  double dr = 0.0;
  double dt = 0.0;

  void validate() const;
  bool operator==(const Grid&) const = default;
};

/// Dense row-major matrix of doubles. Deliberately small: storage, indexing,
/// and a few whole-matrix helpers; numeric kernels live in free functions.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  static Matrix constant(int rows, int cols, double value) { return Matrix(rows, cols, value); }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

/// A matrix tied to its grid; the unit of file I/O and of the C API.
struct Image {
  Grid grid;
  Matrix values;
};

enum class Channel { combined, molecular };

const char* channel_name(Channel c);

/// Expected photon energies (Poisson rates). Strictly positive everywhere.
struct EnergyImage {
  Grid grid;
  Channel channel;
  Matrix values;

  EnergyImage(Grid g, Channel ch, Matrix v);
};

/// Observed photon counts: nonnegative integers stored as doubles.
struct PhotonImage {
  Grid grid;
  Channel channel;
  Matrix counts;

  PhotonImage(Grid g, Channel ch, Matrix c);
};

/// Ground-truth scatter fields. nu is the particulate backscatter
/// cross-section, beta the extinction cross-section, rho the multiple
/// scattering coefficient in [0, 1). Derived fields: nu_plus = nu/(1-rho),
/// mu = (1-rho)*beta/nu, tau the cumulative optical depth of beta.
struct ScatterScene {
  Grid grid;
  Matrix nu;
  Matrix beta;
  Matrix rho;

  ScatterScene(Grid g, Matrix nu_, Matrix beta_, Matrix rho_);

  Matrix nu_plus() const;
  Matrix mu() const;         // invalid where nu == 0
  Matrix optical_depth() const;
};

/// Instrument model: gain/geometry profile c_g, molecular cross-sections
/// c_mc (combined channel) and c_mm (behind the molecular filter), channel
/// backgrounds b_c/b_m, and the scalar particulate leakage c_am of the
/// molecular filter.
struct Calibration {
  Grid grid;
  Matrix c_g;
  Matrix c_mc;
  Matrix c_mm;
  Matrix b_c;
  Matrix b_m;
  double c_am = 0.0;

  Calibration(Grid g, Matrix c_g_, Matrix c_mc_, Matrix c_mm_, Matrix b_c_, Matrix b_m_, double c_am_);
};

/// Output bundle of one inversion run. Fields an algorithm does not produce
/// stay disengaged rather than holding sentinel matrices.
struct InversionProducts {
  Grid grid;
  std::string algorithm;
  std::optional<Matrix> nu_hat;
  std::optional<Matrix> nu_plus_hat;
  std::optional<Matrix> beta_hat;
  std::optional<Matrix> mu_hat;
  std::optional<Matrix> tau_hat;
  /// Extra run facts (lambda choices, box bounds, invalid counts...) carried
  /// into the run manifest as key = value pairs, insertion-ordered.
  std::vector<std::pair<std::string, std::string>> notes;
};

/// Columnwise running sum scaled by the bin width: out[n,k] = dr * sum_{l<=n} x[l,k].
/// This is the discrete optical-depth operator; it is never materialized as a matrix.
Matrix cumulative_integral(const Matrix& field, double dr);

/// Adjoint of cumulative_integral: out[n,k] = dr * sum_{l>=n} x[l,k].
Matrix adjoint_cumulative_integral(const Matrix& field, double dr);

// Matrix file format: one comment header line "# rows=<N> cols=<K> dr=<dr> dt=<dt>"
// then N lines of K comma-separated decimals, 17 significant digits.
void write_matrix_csv(const std::string& path, const Grid& grid, const Matrix& values);
Image read_matrix_csv(const std::string& path);

// Flat "key = value" text files ('#' starts a comment); used for scene
// recipes and run manifests. Order preserved on write.
using KeyValues = std::vector<std::pair<std::string, std::string>>;
void write_key_values(const std::string& path, const KeyValues& kv);
KeyValues read_key_values(const std::string& path);

const std::string* find_key(const KeyValues& kv, const std::string& key);
std::string require_key(const KeyValues& kv, const std::string& key, const std::string& context);
double require_double(const KeyValues& kv, const std::string& key, const std::string& context);
int require_int(const KeyValues& kv, const std::string& key, const std::string& context);
std::string format_double(double v);  // %.17g, round-trip exact

}  // namespace hsrl
