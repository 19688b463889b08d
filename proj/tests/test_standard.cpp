#include <cmath>
#include <vector>

#include "doctest.h"
#include "hsrl/forward.hpp"
#include "hsrl/simulate.hpp"
#include "hsrl/standard.hpp"
#include "test_support.hpp"

using namespace hsrl;
using namespace hsrl_test;

namespace {

struct NoiselessCase {
  ScatterScene scene;
  Calibration calib;
  Matrix s_c;
  Matrix s_m;
};

NoiselessCase random_case(std::mt19937_64& g, int rows, int cols, double rho_value = 0.0) {
  Grid grid{rows, cols, 7.5, 2.5};
  Matrix nu = random_matrix(g, rows, cols, 1e-7, 1e-4);
  Matrix beta = random_matrix(g, rows, cols, 0.0, 2e-3);
  ScatterScene scene(grid, nu, beta, Matrix::constant(rows, cols, rho_value));
  Calibration calib(grid, random_matrix(g, rows, cols, 1e6, 5e7), random_matrix(g, rows, cols, 1e-7, 3e-6),
                    random_matrix(g, rows, cols, 5e-8, 1.5e-6), Matrix::constant(rows, cols, 119.29),
                    Matrix::constant(rows, cols, 21.46), 5e-4);
  Matrix s_c = forward_combined(scene, calib).values;
  Matrix s_m = forward_molecular(scene, calib).values;
  return {std::move(scene), std::move(calib), std::move(s_c), std::move(s_m)};
}

}  // namespace

TEST_CASE("block average: identity, constant blocks, and a double-loop oracle") {
  auto g = rng(61);
  Matrix m = random_matrix(g, 6, 4, -2.0, 2.0);
  CHECK(max_abs_diff(block_average(m, 1, 1), m) == 0.0);

  Matrix ones = Matrix::constant(2, 2, 1.0);
  Matrix avg = block_average(ones, 2, 2);
  CHECK(avg.rows() == 1);
  CHECK(avg.cols() == 1);
  CHECK(avg(0, 0) == 1.0);

  Matrix b = block_average(m, 3, 2);
  for (int n = 0; n < 2; ++n)
    for (int k = 0; k < 2; ++k) {
      double s = 0.0;
      for (int dn = 0; dn < 3; ++dn)
        for (int dk = 0; dk < 2; ++dk) s += m(3 * n + dn, 2 * k + dk);
      CHECK(b(n, k) == doctest::Approx(s / 6.0).epsilon(1e-15));
    }

  CHECK_THROWS_AS(block_average(m, 4, 2), Error);
}

TEST_CASE("moving average: identity, constants, replication at edges, oracle") {
  auto g = rng(62);
  Matrix m = random_matrix(g, 7, 5, 0.0, 10.0);
  CHECK(max_abs_diff(moving_average(m, 1, 1), m) == 0.0);

  Matrix flat = Matrix::constant(5, 5, 3.25);
  CHECK(max_abs_diff(moving_average(flat, 3, 3), flat) <= 1e-15);

  Matrix avg = moving_average(m, 3, 3);
  for (int n : {0, 3, 6})
    for (int k : {0, 2, 4}) {
      double s = 0.0;
      for (int dn = -1; dn <= 1; ++dn)
        for (int dk = -1; dk <= 1; ++dk) {
          int nn = std::min(std::max(n + dn, 0), 6);
          int kk = std::min(std::max(k + dk, 0), 4);
          s += m(nn, kk);
        }
      CHECK(avg(n, k) == doctest::Approx(s / 9.0).epsilon(1e-14));
    }

  CHECK_THROWS_AS(moving_average(m, 2, 3), Error);
  CHECK_THROWS_AS(moving_average(m, 3, 4), Error);
}

TEST_CASE("algebraic optical depth inverts the forward model on noiseless scenes") {
  auto g = rng(63);
  for (int rep = 0; rep < 5; ++rep) {
    NoiselessCase c = random_case(g, 24, 8);
    Matrix tau_hat = invert_od_algebraic(c.s_c, c.s_m, c.calib);
    Matrix tau = c.scene.optical_depth();
    CHECK(max_rel_diff(tau_hat, tau) <= 1e-10);
  }
}

TEST_CASE("zero extinction gives exactly zero optical depth") {
  auto g = rng(64);
  NoiselessCase c = random_case(g, 12, 6);
  ScatterScene clear(c.scene.grid, c.scene.nu, Matrix::constant(12, 6, 0.0), c.scene.rho);
  Matrix s_c = forward_combined(clear, c.calib).values;
  Matrix s_m = forward_molecular(clear, c.calib).values;
  Matrix tau_hat = invert_od_algebraic(s_c, s_m, c.calib);
  // the log argument is 1 up to rounding of the forward model
  for (std::size_t i = 0; i < tau_hat.size(); ++i) CHECK(std::abs(tau_hat[i]) <= 1e-12);
}

TEST_CASE("non-positive transmittance argument marks the pixel invalid") {
  auto g = rng(65);
  NoiselessCase c = random_case(g, 8, 4);
  // kill the molecular return at one pixel: the inferred squared two-way
  // transmittance there flips sign and the logarithm has no real value
  c.s_m(3, 2) = c.calib.b_m(3, 2);
  Matrix tau_hat = invert_od_algebraic(c.s_c, c.s_m, c.calib);
  CHECK(is_invalid(tau_hat(3, 2)));
  CHECK(!is_invalid(tau_hat(0, 0)));
}

TEST_CASE("algebraic backscatter inverts the forward model on noiseless scenes") {
  auto g = rng(66);
  for (int rep = 0; rep < 5; ++rep) {
    NoiselessCase c = random_case(g, 24, 8);
    Matrix nu_hat = invert_nu_algebraic(c.s_c, c.s_m, c.calib);
    CHECK(max_rel_diff(nu_hat, c.scene.nu) <= 1e-10);
  }
}

TEST_CASE("zero backscatter scene inverts to exactly zero") {
  auto g = rng(67);
  Grid grid{12, 6, 7.5, 2.5};
  ScatterScene scene(grid, Matrix::constant(12, 6, 0.0), random_matrix(g, 12, 6, 0.0, 1e-3),
                     Matrix::constant(12, 6, 0.0));
  Calibration calib(grid, Matrix::constant(12, 6, 2e7), Matrix::constant(12, 6, 2e-6),
                    Matrix::constant(12, 6, 1e-6), Matrix::constant(12, 6, 119.29),
                    Matrix::constant(12, 6, 21.46), 5e-4);
  Matrix s_c = forward_combined(scene, calib).values;
  Matrix s_m = forward_molecular(scene, calib).values;
  Matrix nu_hat = invert_nu_algebraic(s_c, s_m, calib);
  // numerator is an exact cancellation up to the rounding of two products
  for (std::size_t i = 0; i < nu_hat.size(); ++i) CHECK(std::abs(nu_hat[i]) <= 1e-12);
}

TEST_CASE("zero denominator marks the backscatter pixel invalid") {
  auto g = rng(68);
  NoiselessCase c = random_case(g, 8, 4);
  // both channels at pure background: the ratio degenerates to 0/0
  c.s_c(2, 1) = c.calib.b_c(2, 1);
  c.s_m(2, 1) = c.calib.b_m(2, 1);
  Matrix nu_hat = invert_nu_algebraic(c.s_c, c.s_m, c.calib);
  CHECK(is_invalid(nu_hat(2, 1)));
}

TEST_CASE("savitzky-golay reproduces low-degree polynomials exactly, boundaries included") {
  int n = 40;
  std::vector<double> quad(n), line(n), flat(n, 2.5);
  for (int i = 0; i < n; ++i) {
    quad[i] = 0.3 * i * i - 2.0 * i + 7.0;
    line[i] = 1.5 * i - 4.0;
  }
  std::vector<double> sq = savitzky_golay(quad, 7, 2);
  std::vector<double> sl = savitzky_golay(line, 5, 1);
  std::vector<double> sf = savitzky_golay(flat, 9, 0);
  for (int i = 0; i < n; ++i) {
    CHECK(sq[i] == doctest::Approx(quad[i]).epsilon(1e-11));
    CHECK(sl[i] == doctest::Approx(line[i]).epsilon(1e-11));
    CHECK(sf[i] == doctest::Approx(flat[i]).epsilon(1e-12));
  }
}

TEST_CASE("savitzky-golay matches a direct least-squares oracle, invalids excluded") {
  auto g = rng(71);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int n = 30;
  std::vector<double> y(n);
  for (double& v : y) v = u(g);
  y[11] = kInvalid;  // one dead sample inside the signal

  std::vector<double> smoothed = savitzky_golay(y, 5, 1);
  for (int i = 0; i < n; ++i) {
    int lo = std::max(0, i - 2), hi = std::min(n - 1, i + 2);
    double sx = 0, sxx = 0, sy = 0, sxy = 0;
    int count = 0;
    for (int j = lo; j <= hi; ++j) {
      if (is_invalid(y[j])) continue;
      double x = j - i;
      sx += x, sxx += x * x, sy += y[j], sxy += x * y[j];
      ++count;
    }
    double det = count * sxx - sx * sx;
    double intercept = (sy * sxx - sx * sxy) / det;
    CHECK(smoothed[i] == doctest::Approx(intercept).epsilon(1e-12));
  }
}

TEST_CASE("savitzky-golay output is invalid only where too few valid samples remain") {
  std::vector<double> y(20, 1.0);
  for (int i = 6; i <= 12; ++i) y[i] = kInvalid;
  std::vector<double> s = savitzky_golay(y, 5, 1);
  // deep inside the dead run the window holds no valid samples
  CHECK(is_invalid(s[9]));
  // at the edge of the run enough neighbours remain, so the hole heals
  CHECK(s[6] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(savitzky_golay(y, 3, 3), Error);   // window below order+1
  CHECK_THROWS_AS(savitzky_golay(y, 4, 1), Error);   // even window
}

TEST_CASE("finite differences: linear slopes, constants, and a stencil oracle") {
  Grid grid{10, 3, 2.0, 1.0};
  Matrix lin(10, 3), flat = Matrix::constant(10, 3, 4.2);
  for (int n = 0; n < 10; ++n)
    for (int k = 0; k < 3; ++k) lin(n, k) = 0.7 * (n + 1) * grid.dr + k;

  Matrix d_lin = finite_difference(lin, grid.dr, DerivativeScheme::central);
  for (std::size_t i = 0; i < d_lin.size(); ++i) CHECK(d_lin[i] == doctest::Approx(0.7).epsilon(1e-13));

  Matrix d_flat = finite_difference(flat, grid.dr, DerivativeScheme::central);
  for (std::size_t i = 0; i < d_flat.size(); ++i) CHECK(d_flat[i] == 0.0);

  auto g = rng(72);
  Matrix tau = random_matrix(g, 9, 4, -1.0, 1.0);
  Matrix d = finite_difference(tau, 0.5, DerivativeScheme::central);
  for (int k = 0; k < 4; ++k) {
    CHECK(d(0, k) == doctest::Approx((tau(1, k) - tau(0, k)) / 0.5).epsilon(1e-13));
    CHECK(d(8, k) == doctest::Approx((tau(8, k) - tau(7, k)) / 0.5).epsilon(1e-13));
    for (int n = 1; n < 8; ++n)
      CHECK(d(n, k) == doctest::Approx((tau(n + 1, k) - tau(n - 1, k)) / 1.0).epsilon(1e-13));
  }
}

TEST_CASE("forward differencing exactly inverts the cumulative integral") {
  auto g = rng(73);
  Matrix beta = random_matrix(g, 32, 8, 0.0, 1e-2);
  Matrix tau = cumulative_integral(beta, 7.5);
  Matrix back = finite_difference(tau, 7.5, DerivativeScheme::forward);
  CHECK(max_abs_diff(back, beta) <= 1e-15);
}

TEST_CASE("finite differences propagate invalid samples through the stencil") {
  Matrix tau = Matrix::constant(6, 1, 1.0);
  tau(3, 0) = kInvalid;
  Matrix c = finite_difference(tau, 1.0, DerivativeScheme::central);
  CHECK(is_invalid(c(2, 0)));
  CHECK(is_invalid(c(4, 0)));
  CHECK(!is_invalid(c(1, 0)));
  Matrix f = finite_difference(tau, 1.0, DerivativeScheme::forward);
  CHECK(is_invalid(f(3, 0)));
  CHECK(is_invalid(f(4, 0)));
  CHECK(!is_invalid(f(2, 0)));
}

TEST_CASE("baseline pipeline recovers a noiseless scene exactly with smoothing off") {
  SceneRecipe recipe;
  auto [scene, calib] = make_cirrus_scene(recipe);
  Matrix s_c = forward_combined(scene, calib).values;
  Matrix s_m = forward_molecular(scene, calib).values;

  StandardOptions opts;  // averaging none, SG windows 1, forward derivative
  InversionProducts p = algorithm1_from_means(scene.grid, s_c, s_m, calib, scene.rho, opts);

  CHECK(p.algorithm == "standard");
  CHECK(p.grid == scene.grid);
  CHECK(max_rel_diff(*p.nu_hat, scene.nu) <= 1e-10);
  CHECK(max_rel_diff(*p.nu_plus_hat, scene.nu_plus()) <= 1e-10);
  CHECK(max_rel_diff(*p.tau_hat, scene.optical_depth()) <= 1e-10);
  CHECK(max_rel_diff(*p.beta_hat, scene.beta) <= 1e-8);
  Matrix mu = scene.mu();
  for (int n = 0; n < mu.rows(); ++n)
    for (int k = 0; k < mu.cols(); ++k)
      CHECK((*p.mu_hat)(n, k) == doctest::Approx(mu(n, k)).epsilon(1e-8));
}

TEST_CASE("baseline pipeline honours multiple scattering in its derived products") {
  auto g = rng(74);
  NoiselessCase c = random_case(g, 16, 6, 0.25);
  StandardOptions opts;
  InversionProducts p = algorithm1_from_means(c.scene.grid, c.s_c, c.s_m, c.calib, c.scene.rho, opts);
  CHECK(max_rel_diff(*p.nu_plus_hat, c.scene.nu_plus()) <= 1e-9);
  Matrix mu = c.scene.mu();
  for (int n = 0; n < 16; ++n)
    for (int k = 0; k < 6; ++k)
      CHECK((*p.mu_hat)(n, k) == doctest::Approx(mu(n, k)).epsilon(1e-7));
}

TEST_CASE("block averaging coarsens the product grid") {
  SceneRecipe recipe;
  auto [scene, calib] = make_cirrus_scene(recipe);
  EnergyImage rate_c = forward_combined(scene, calib);
  EnergyImage rate_m = forward_molecular(scene, calib);
  PhotonImage y_c = sample_poisson(rate_c, 11);
  PhotonImage y_m(rate_m.grid, Channel::molecular, sample_poisson(rate_m, 12).counts);

  StandardOptions opts;
  opts.averaging = {AveragingMode::block, 2, 2};
  opts.sg_temporal = {3, 1};
  opts.sg_range = {5, 1};
  InversionProducts p = algorithm1(y_c, y_m, calib, scene.rho, opts);
  CHECK(p.grid.n_range == 32);
  CHECK(p.grid.n_profiles == 16);
  CHECK(p.grid.dr == 15.0);
  CHECK(p.grid.dt == 5.0);
  CHECK(p.nu_hat->rows() == 32);
  CHECK(p.tau_hat->cols() == 16);
  const std::string* invalid_note = find_key(p.notes, "invalid_od_pixels");
  REQUIRE(invalid_note != nullptr);
}

TEST_CASE("baseline pipeline validates channels and rho") {
  SceneRecipe recipe;
  recipe.grid = Grid{8, 4, 7.5, 2.5};
  recipe.cloud_row_lo = 2;
  recipe.cloud_row_hi = 5;
  recipe.cloud_col_lo = 1;
  recipe.cloud_col_hi = 2;
  auto [scene, calib] = make_cirrus_scene(recipe);
  PhotonImage y_c = sample_poisson(forward_combined(scene, calib), 1);
  PhotonImage y_m(scene.grid, Channel::molecular, sample_poisson(forward_molecular(scene, calib), 2).counts);

  StandardOptions opts;
  CHECK_THROWS_AS(algorithm1(y_m, y_m, calib, scene.rho, opts), Error);
  Matrix bad_rho = Matrix::constant(8, 4, 1.0);
  CHECK_THROWS_AS(algorithm1(y_c, y_m, calib, bad_rho, opts), Error);
}

TEST_CASE("zero extinction stays near zero in the high-count limit") {
  Grid grid{16, 8, 7.5, 2.5};
  ScatterScene scene(grid, Matrix::constant(16, 8, 1e-6), Matrix::constant(16, 8, 0.0),
                     Matrix::constant(16, 8, 0.0));
  Calibration calib(grid, Matrix::constant(16, 8, 5e9), Matrix::constant(16, 8, 2e-6),
                    Matrix::constant(16, 8, 1e-6), Matrix::constant(16, 8, 100.0),
                    Matrix::constant(16, 8, 100.0), 5e-4);
  PhotonImage y_c = sample_poisson(forward_combined(scene, calib), 21);
  PhotonImage y_m(grid, Channel::molecular, sample_poisson(forward_molecular(scene, calib), 22).counts);
  StandardOptions opts;
  InversionProducts p = algorithm1(y_c, y_m, calib, scene.rho, opts);
  const Matrix& beta_hat = *p.beta_hat;
  double mean = 0.0;
  for (std::size_t i = 0; i < beta_hat.size(); ++i) mean += beta_hat[i];
  mean /= static_cast<double>(beta_hat.size());
  double var = 0.0;
  for (std::size_t i = 0; i < beta_hat.size(); ++i) var += (beta_hat[i] - mean) * (beta_hat[i] - mean);
  var /= static_cast<double>(beta_hat.size() - 1);
  double sigma_of_mean = std::sqrt(var / static_cast<double>(beta_hat.size()));
  CHECK(std::abs(mean) <= 3.0 * sigma_of_mean + 1e-12);
}
