#include "hsrl/standard.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace hsrl {

namespace {

// Solve a dense n x n system by Gaussian elimination with partial pivoting;
// the solution lands in b. Returns false on a vanishing pivot.
bool solve_small(std::vector<double>& a, std::vector<double>& b, int n) {
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (std::abs(a[piv * n + col]) < 1e-300) return false;
    if (piv != col) {
      for (int c = 0; c < n; ++c) std::swap(a[piv * n + c], a[col * n + c]);
      std::swap(b[piv], b[col]);
    }
    for (int r = col + 1; r < n; ++r) {
      double f = a[r * n + col] / a[col * n + col];
      for (int c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < n; ++c) s -= a[r * n + c] * b[c];
    b[r] = s / a[r * n + r];
  }
  return true;
}

void check_calib_shape(const Matrix& s_c, const Matrix& s_m, const Calibration& calib) {
  if (!s_c.same_shape(s_m) || !s_c.same_shape(calib.c_g))
    fail(ErrorCode::invalid_argument, "channel means and calibration must share one shape");
}

}  // namespace

void AveragingOptions::validate() const {
  if (rows < 1 || cols < 1) fail(ErrorCode::invalid_argument, "averaging window must be at least 1x1");
  if (mode == AveragingMode::moving && (rows % 2 == 0 || cols % 2 == 0))
    fail(ErrorCode::invalid_argument, "moving-average windows must be odd");
}

void SgOptions::validate() const {
  if (window < 1 || window % 2 == 0)
    fail(ErrorCode::invalid_argument, "smoothing window must be a positive odd bin count");
  if (poly_order < 0) fail(ErrorCode::invalid_argument, "polynomial order must be nonnegative");
  if (window > 1 && window < poly_order + 1)
    fail(ErrorCode::invalid_argument, "smoothing window too small for the polynomial order");
}

Matrix block_average(const Matrix& image, int rows, int cols) {
  if (rows < 1 || cols < 1) fail(ErrorCode::invalid_argument, "block sizes must be positive");
  if (image.rows() % rows != 0 || image.cols() % cols != 0)
    fail(ErrorCode::invalid_argument, "image shape must divide evenly into blocks");
  Matrix out(image.rows() / rows, image.cols() / cols);
  double scale = 1.0 / (static_cast<double>(rows) * cols);
  for (int n = 0; n < out.rows(); ++n)
    for (int k = 0; k < out.cols(); ++k) {
      double s = 0.0;
      for (int dn = 0; dn < rows; ++dn)
        for (int dk = 0; dk < cols; ++dk) s += image(n * rows + dn, k * cols + dk);
      out(n, k) = s * scale;
    }
  return out;
}

Matrix moving_average(const Matrix& image, int rows, int cols) {
  if (rows < 1 || cols < 1 || rows % 2 == 0 || cols % 2 == 0)
    fail(ErrorCode::invalid_argument, "moving-average windows must be positive odd integers");
  int hr = rows / 2, hc = cols / 2;
  Matrix out(image.rows(), image.cols());
  double scale = 1.0 / (static_cast<double>(rows) * cols);
  for (int n = 0; n < image.rows(); ++n)
    for (int k = 0; k < image.cols(); ++k) {
      double s = 0.0;
      for (int dn = -hr; dn <= hr; ++dn)
        for (int dk = -hc; dk <= hc; ++dk) {
          int nn = std::clamp(n + dn, 0, image.rows() - 1);
          int kk = std::clamp(k + dk, 0, image.cols() - 1);
          s += image(nn, kk);
        }
      out(n, k) = s * scale;
    }
  return out;
}

Matrix invert_od_algebraic(const Matrix& s_c, const Matrix& s_m, const Calibration& calib) {
  check_calib_shape(s_c, s_m, calib);
  Matrix tau(s_c.rows(), s_c.cols());
  for (int n = 0; n < s_c.rows(); ++n)
    for (int k = 0; k < s_c.cols(); ++k) {
      double num = (s_c(n, k) - calib.b_c(n, k)) * calib.c_am - (s_m(n, k) - calib.b_m(n, k));
      double den = calib.c_g(n, k) * (calib.c_mc(n, k) * calib.c_am - calib.c_mm(n, k));
      double arg = num / den;
      // arg is the squared two-way transmittance; noise can push it to zero
      // or below, which has no real-valued optical depth.
      tau(n, k) = (std::isfinite(arg) && arg > 0.0) ? -0.5 * std::log(arg) : kInvalid;
    }
  return tau;
}

Matrix invert_nu_algebraic(const Matrix& s_c, const Matrix& s_m, const Calibration& calib) {
  check_calib_shape(s_c, s_m, calib);
  Matrix nu(s_c.rows(), s_c.cols());
  for (int n = 0; n < s_c.rows(); ++n)
    for (int k = 0; k < s_c.cols(); ++k) {
      double dc = s_c(n, k) - calib.b_c(n, k);
      double dm = s_m(n, k) - calib.b_m(n, k);
      double num = dc * calib.c_mm(n, k) - dm * calib.c_mc(n, k);
      double den = dm - dc * calib.c_am;
      double v = num / den;
      nu(n, k) = std::isfinite(v) ? v : kInvalid;
    }
  return nu;
}

std::vector<double> savitzky_golay(const std::vector<double>& signal, int window, int poly_order) {
  SgOptions opts{window, poly_order};
  opts.validate();
  if (window == 1) return signal;

  int n = static_cast<int>(signal.size());
  int half = window / 2;
  int terms = poly_order + 1;
  std::vector<double> out(signal.size());
  std::vector<double> normal(static_cast<std::size_t>(terms) * terms);
  std::vector<double> rhs(terms);
  std::vector<double> powers(terms);

  for (int i = 0; i < n; ++i) {
    int lo = std::max(0, i - half);
    int hi = std::min(n - 1, i + half);
    std::fill(normal.begin(), normal.end(), 0.0);
    std::fill(rhs.begin(), rhs.end(), 0.0);
    int valid = 0;
    for (int j = lo; j <= hi; ++j) {
      if (is_invalid(signal[j])) continue;
      ++valid;
      double x = static_cast<double>(j - i);
      powers[0] = 1.0;
      for (int a = 1; a < terms; ++a) powers[a] = powers[a - 1] * x;
      for (int a = 0; a < terms; ++a) {
        rhs[a] += powers[a] * signal[j];
        for (int b = 0; b < terms; ++b) normal[a * terms + b] += powers[a] * powers[b];
      }
    }
    if (valid < terms) {
      out[i] = kInvalid;
      continue;
    }
    std::vector<double> a = normal;
    std::vector<double> coef = rhs;
    out[i] = solve_small(a, coef, terms) ? coef[0] : kInvalid;
  }
  return out;
}

Matrix savitzky_golay_ranges(const Matrix& image, const SgOptions& opts) {
  opts.validate();
  if (opts.window == 1) return image;
  Matrix out(image.rows(), image.cols());
  std::vector<double> column(image.rows());
  for (int k = 0; k < image.cols(); ++k) {
    for (int n = 0; n < image.rows(); ++n) column[n] = image(n, k);
    std::vector<double> smoothed = savitzky_golay(column, opts.window, opts.poly_order);
    for (int n = 0; n < image.rows(); ++n) out(n, k) = smoothed[n];
  }
  return out;
}

Matrix savitzky_golay_profiles(const Matrix& image, const SgOptions& opts) {
  opts.validate();
  if (opts.window == 1) return image;
  Matrix out(image.rows(), image.cols());
  std::vector<double> row(image.cols());
  for (int n = 0; n < image.rows(); ++n) {
    for (int k = 0; k < image.cols(); ++k) row[k] = image(n, k);
    std::vector<double> smoothed = savitzky_golay(row, opts.window, opts.poly_order);
    for (int k = 0; k < image.cols(); ++k) out(n, k) = smoothed[k];
  }
  return out;
}

Matrix finite_difference(const Matrix& tau, double dr, DerivativeScheme scheme) {
  if (tau.rows() < 2) fail(ErrorCode::invalid_argument, "derivative needs at least two range bins");
  if (!(dr > 0.0)) fail(ErrorCode::invalid_argument, "dr must be positive");
  Matrix out(tau.rows(), tau.cols());
  int last = tau.rows() - 1;
  for (int k = 0; k < tau.cols(); ++k) {
    if (scheme == DerivativeScheme::forward) {
      out(0, k) = tau(0, k) / dr;
      for (int n = 1; n <= last; ++n) out(n, k) = (tau(n, k) - tau(n - 1, k)) / dr;
    } else {
      out(0, k) = (tau(1, k) - tau(0, k)) / dr;
      for (int n = 1; n < last; ++n) out(n, k) = (tau(n + 1, k) - tau(n - 1, k)) / (2.0 * dr);
      out(last, k) = (tau(last, k) - tau(last - 1, k)) / dr;
    }
  }
  return out;
}

InversionProducts algorithm1(const PhotonImage& y_c, const PhotonImage& y_m,
                             const Calibration& calib, const Matrix& rho,
                             const StandardOptions& opts) {
  if (y_c.channel != Channel::combined || y_m.channel != Channel::molecular)
    fail(ErrorCode::invalid_argument, "algorithm1 expects (combined, molecular) channel order");
  if (!(y_c.grid == y_m.grid))
    fail(ErrorCode::invalid_argument, "count images must share one grid");
  return algorithm1_from_means(y_c.grid, y_c.counts, y_m.counts, calib, rho, opts);
}

InversionProducts algorithm1_from_means(const Grid& in_grid, const Matrix& s_c_in,
                                        const Matrix& s_m_in, const Calibration& calib,
                                        const Matrix& rho, const StandardOptions& opts) {
  in_grid.validate();
  if (!(in_grid == calib.grid))
    fail(ErrorCode::invalid_argument, "channel means and calibration must share one grid");
  if (s_c_in.rows() != in_grid.n_range || s_c_in.cols() != in_grid.n_profiles ||
      !s_c_in.same_shape(s_m_in))
    fail(ErrorCode::invalid_argument, "channel means must match the grid shape");
  if (!rho.same_shape(s_c_in))
    fail(ErrorCode::invalid_argument, "rho must match the channel mean shape");
  for (std::size_t i = 0; i < rho.size(); ++i)
    if (!(rho[i] >= 0.0 && rho[i] < 1.0))
      fail(ErrorCode::invalid_argument, "rho must lie in [0, 1)");
  opts.averaging.validate();
  opts.sg_temporal.validate();
  opts.sg_range.validate();

  // Line 1: average the two channels; block averaging coarsens the grid and
  // the calibration with it.
  Grid grid = in_grid;
  Matrix s_c = s_c_in;
  Matrix s_m = s_m_in;
  Matrix rho2 = rho;
  Calibration calib2 = calib;
  if (opts.averaging.mode == AveragingMode::block) {
    int br = opts.averaging.rows, bc = opts.averaging.cols;
    s_c = block_average(s_c, br, bc);
    s_m = block_average(s_m, br, bc);
    rho2 = block_average(rho2, br, bc);
    grid = Grid{in_grid.n_range / br, in_grid.n_profiles / bc, in_grid.dr * br, in_grid.dt * bc};
    calib2 = Calibration(grid, block_average(calib.c_g, br, bc), block_average(calib.c_mc, br, bc),
                         block_average(calib.c_mm, br, bc), block_average(calib.b_c, br, bc),
                         block_average(calib.b_m, br, bc), calib.c_am);
  } else if (opts.averaging.mode == AveragingMode::moving) {
    s_c = moving_average(s_c, opts.averaging.rows, opts.averaging.cols);
    s_m = moving_average(s_m, opts.averaging.rows, opts.averaging.cols);
  }

  // Lines 2-3: closed-form optical depth and backscatter.
  Matrix tau_raw = invert_od_algebraic(s_c, s_m, calib2);
  Matrix nu_hat = invert_nu_algebraic(s_c, s_m, calib2);

  std::size_t invalid_od = 0;
  for (std::size_t i = 0; i < tau_raw.size(); ++i)
    if (is_invalid(tau_raw[i])) ++invalid_od;
  std::string dead_columns;
  for (int k = 0; k < tau_raw.cols(); ++k) {
    bool any_valid = false;
    for (int n = 0; n < tau_raw.rows(); ++n)
      if (!is_invalid(tau_raw(n, k))) any_valid = true;
    if (!any_valid) {
      if (!dead_columns.empty()) dead_columns += ' ';
      dead_columns += std::to_string(k);
    }
  }

  // Lines 4-5: lowpass the optical depth (temporal axis, then range axis)
  // and differentiate down each column.
  Matrix tau_hat = savitzky_golay_ranges(savitzky_golay_profiles(tau_raw, opts.sg_temporal), opts.sg_range);
  Matrix beta_hat = finite_difference(tau_hat, grid.dr, opts.derivative);

  // Lines 6-8: total backscatter and the lidar ratio.
  Matrix nu_plus_hat(nu_hat.rows(), nu_hat.cols());
  Matrix mu_hat(nu_hat.rows(), nu_hat.cols());
  for (int n = 0; n < nu_hat.rows(); ++n)
    for (int k = 0; k < nu_hat.cols(); ++k) {
      double one_minus_rho = 1.0 - rho2(n, k);
      nu_plus_hat(n, k) = nu_hat(n, k) / one_minus_rho;
      double m = one_minus_rho * beta_hat(n, k) / nu_hat(n, k);
      // A ratio of cross-sections is only meaningful where the inferred
      // backscatter is positive.
      mu_hat(n, k) = (nu_hat(n, k) > 0.0 && std::isfinite(m)) ? m : kInvalid;
    }

  InversionProducts products;
  products.grid = grid;
  products.algorithm = "standard";
  products.nu_hat = std::move(nu_hat);
  products.nu_plus_hat = std::move(nu_plus_hat);
  products.beta_hat = std::move(beta_hat);
  products.mu_hat = std::move(mu_hat);
  products.tau_hat = std::move(tau_hat);
  products.notes.emplace_back("invalid_od_pixels", std::to_string(invalid_od));
  if (!dead_columns.empty()) products.notes.emplace_back("all_invalid_columns", dead_columns);
  return products;
}

}  // namespace hsrl
