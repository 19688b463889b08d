#include "hsrl/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hsrl/forward.hpp"
#include "hsrl/simulate.hpp"
#include "hsrl/standard.hpp"

namespace hsrl {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kThin = 0.5;  // cross-validation thinning probability

// Sub-seed streams: channel denoising uses 0/1, the ratio fit 2, the
// extinction fit 3, so chained runs sharing a master seed never reuse splits.
enum SeedStream : std::uint64_t {
  kStreamOmegaC = 0,
  kStreamOmegaM = 1,
  kStreamMu = 2,
  kStreamBeta = 3,
};

void check_pipeline_inputs(const PhotonImage& y_m, const Calibration& calib, const Matrix& rho) {
  if (y_m.channel != Channel::molecular)
    fail(ErrorCode::invalid_argument, "the attenuation fit runs against the molecular channel");
  if (!(y_m.grid == calib.grid))
    fail(ErrorCode::invalid_argument, "counts and calibration must share one grid");
  if (!rho.same_shape(y_m.counts))
    fail(ErrorCode::invalid_argument, "rho must match the count image shape");
  for (std::size_t i = 0; i < rho.size(); ++i)
    if (!(rho[i] >= 0.0 && rho[i] < 1.0))
      fail(ErrorCode::invalid_argument, "rho must lie in [0, 1)");
}

// Calibration with every expected-count constant halved, matching the mean
// of a p = 0.5 thinned channel.
Calibration half_calibration(const Calibration& calib) {
  auto scale = [](const Matrix& m) {
    Matrix out = m;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= kThin;
    return out;
  };
  return Calibration(calib.grid, scale(calib.c_g), calib.c_mc, calib.c_mm, scale(calib.b_c),
                     scale(calib.b_m), calib.c_am);
}

// The exponential-model stages (lidar ratio, extinction) see loss curvatures
// that grow with the count level, far past the default step ceiling tuned
// for the identity-model denoisers. Raise only the ceiling so the
// Barzilai-Borwein step can match the local curvature; every other knob
// stays the caller's.
SolverOptions exponential_stage_options(SolverOptions opts) {
  opts.step_max = std::max(opts.step_max, 1e15);
  return opts;
}

// Nonpositive, NaN and negative entries all collapse to zero: the fit models
// need a usable backscatter value at every pixel.
Matrix clamp_nonnegative(const Matrix& m) {
  Matrix out = m;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(out[i] > 0.0)) out[i] = 0.0;
  return out;
}

int count_invalid(const Matrix& m) {
  int n = 0;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (!std::isfinite(m[i])) ++n;
  return n;
}

std::string bool_note(bool v) { return v ? "true" : "false"; }

const LambdaRow& winning_row(const SelectedLambda& sel) {
  for (const LambdaRow& row : sel.table)
    if (row.solved && row.lambda == sel.lambda_star) return row;
  fail(ErrorCode::numeric_failure, "selected lambda missing from its own table");
}

// Cross-validated denoise of one channel: solve for the train-scale signal
// (half the full-data expectation) and rescale back afterwards.
SelectedLambda denoise_one_channel(const PhotonImage& y, const Matrix& background,
                                   const Calibration& calib, const LambdaGrid& grid,
                                   const SolverOptions& opts, std::uint64_t stage_seed) {
  const Grid& g = calib.grid;
  Matrix b_half = background;
  for (std::size_t i = 0; i < b_half.size(); ++i) b_half[i] *= kThin;

  TrainObjectiveFactory factory = [b_half](const std::vector<PhotonImage>& train) {
    PhotonImage t = train[0];
    Objective obj{
        [t, b_half](const Matrix& x) { return poisson_loss_omega(x, t, b_half); },
        [t, b_half](const Matrix& x) { return poisson_loss_omega_grad(x, t, b_half); }};
    // Start from a lightly smoothed, background-subtracted version of the
    // train counts; clip at zero to stay inside the box.
    Matrix x0 = moving_average(t.counts, 3, 3);
    for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = std::max(x0[i] - b_half[i], 0.0);
    return std::make_pair(std::move(obj), std::move(x0));
  };
  ValidationLoss validation = [b_half](const Matrix& est, const std::vector<PhotonImage>& test) {
    return poisson_loss_omega(est, test[0], b_half);
  };

  BoxConstraint box = BoxConstraint::uniform(g.n_range, g.n_profiles, 0.0, kInf);
  SelectedLambda sel = select_lambda(factory, validation, {y}, grid, box, opts, stage_seed);
  // The train half has mean 0.5 * (omega + b); undo the thinning scale.
  for (std::size_t i = 0; i < sel.estimate.size(); ++i) sel.estimate[i] /= kThin;
  return sel;
}

}  // namespace

std::pair<Matrix, Matrix> denoise_channels(const PhotonImage& y_c, const PhotonImage& y_m,
                                           const Calibration& calib, const LambdaGrid& grid,
                                           const SolverOptions& opts, std::uint64_t seed,
                                           TvRunDetails* details) {
  if (y_c.channel != Channel::combined || y_m.channel != Channel::molecular)
    fail(ErrorCode::invalid_argument, "denoise_channels expects (combined, molecular) channel order");
  if (!(y_c.grid == y_m.grid) || !(y_c.grid == calib.grid))
    fail(ErrorCode::invalid_argument, "counts and calibration must share one grid");
  opts.validate();

  SelectedLambda sel_c =
      denoise_one_channel(y_c, calib.b_c, calib, grid, opts, derive_seed(seed, kStreamOmegaC));
  SelectedLambda sel_m =
      denoise_one_channel(y_m, calib.b_m, calib, grid, opts, derive_seed(seed, kStreamOmegaM));

  Matrix omega_c = sel_c.estimate;
  Matrix omega_m = sel_m.estimate;
  if (details) {
    details->stages.push_back({"omega_c", std::move(sel_c)});
    details->stages.push_back({"omega_m", std::move(sel_m)});
    details->omega_c_hat = omega_c;
    details->omega_m_hat = omega_m;
  }
  return {std::move(omega_c), std::move(omega_m)};
}

Matrix combine_channels_nu(const Matrix& omega_c_hat, const Matrix& omega_m_hat,
                           const Calibration& calib) {
  if (!omega_c_hat.same_shape(omega_m_hat) || !omega_c_hat.same_shape(calib.c_g))
    fail(ErrorCode::invalid_argument, "denoised channels and calibration must share one shape");
  Matrix nu(omega_c_hat.rows(), omega_c_hat.cols());
  for (std::size_t i = 0; i < nu.size(); ++i) {
    double denom = omega_m_hat[i] - omega_c_hat[i] * calib.c_am;
    double numer = omega_c_hat[i] * calib.c_mm[i] - omega_m_hat[i] * calib.c_mc[i];
    nu[i] = denom > 0.0 ? numer / denom : kNan;
  }
  return nu;
}

InversionProducts algorithm2(const PhotonImage& y_c, const PhotonImage& y_m,
                             const Calibration& calib, const Matrix& rho,
                             const LambdaGrid& omega_grid, const LambdaGrid& mu_grid,
                             const TvPipelineOptions& opts, std::uint64_t seed,
                             TvRunDetails* details) {
  check_pipeline_inputs(y_m, calib, rho);
  if (opts.mu_upper && !(*opts.mu_upper >= 1.0))
    fail(ErrorCode::invalid_argument, "the lidar-ratio upper bound must be at least 1");
  const Grid& grid = calib.grid;

  TvRunDetails local;
  TvRunDetails* det = details ? details : &local;
  std::size_t stage_base = det->stages.size();
  auto [omega_c, omega_m] = denoise_channels(y_c, y_m, calib, omega_grid, opts.solver, seed, det);

  Matrix nu_hat = combine_channels_nu(omega_c, omega_m, calib);
  Matrix nu_plus(nu_hat.rows(), nu_hat.cols());
  for (std::size_t i = 0; i < nu_plus.size(); ++i) nu_plus[i] = nu_hat[i] / (1.0 - rho[i]);

  // The ratio model needs a nonnegative backscatter everywhere; invalid or
  // negative pixels participate as zero (no sensitivity to the ratio there)
  // but are reported untouched.
  Matrix nu_model = clamp_nonnegative(nu_hat);

  BoxConstraint mu_box = mu_upper_bound(y_m, nu_model, calib);
  if (opts.mu_upper)
    mu_box.upper = Matrix::constant(grid.n_range, grid.n_profiles, *opts.mu_upper);

  Calibration calib_half = half_calibration(calib);
  TrainObjectiveFactory factory = [&nu_model, &calib_half, &grid](
                                      const std::vector<PhotonImage>& train) {
    PhotonImage t = train[0];
    Objective obj{[t, &nu_model, &calib_half](const Matrix& x) {
                    return poisson_loss_mu(x, t, nu_model, calib_half);
                  },
                  [t, &nu_model, &calib_half](const Matrix& x) {
                    return poisson_loss_mu_grad(x, t, nu_model, calib_half);
                  }};
    return std::make_pair(std::move(obj), Matrix::constant(grid.n_range, grid.n_profiles, 1.0));
  };
  ValidationLoss validation = [&nu_model, &calib_half](const Matrix& est,
                                                       const std::vector<PhotonImage>& test) {
    return poisson_loss_mu(est, test[0], nu_model, calib_half);
  };
  SelectedLambda sel_mu = select_lambda(factory, validation, {y_m}, mu_grid, mu_box,
                                        exponential_stage_options(opts.solver),
                                        derive_seed(seed, kStreamMu));

  Matrix mu_hat = sel_mu.estimate;
  for (std::size_t i = 0; i < mu_hat.size(); ++i) mu_hat[i] *= (1.0 - rho[i]);
  // beta reuses the clamped backscatter the ratio fit actually modeled, so
  // beta_hat >= 0 everywhere and the transmittance stays within (0, 1]; the
  // invalid marks live on nu_hat / nu_plus_hat.
  Matrix beta_hat(mu_hat.rows(), mu_hat.cols());
  for (std::size_t i = 0; i < beta_hat.size(); ++i)
    beta_hat[i] = nu_model[i] / (1.0 - rho[i]) * mu_hat[i];
  Matrix tau_hat = cumulative_integral(beta_hat, grid.dr);

  InversionProducts out;
  out.grid = grid;
  out.algorithm = "tv_new";
  out.nu_hat = nu_hat;
  out.nu_plus_hat = nu_plus;
  out.beta_hat = beta_hat;
  out.mu_hat = mu_hat;
  out.tau_hat = tau_hat;

  const SelectedLambda& sel_c = det->stages[stage_base].selection;
  const SelectedLambda& sel_m = det->stages[stage_base + 1].selection;
  const LambdaRow& row_c = winning_row(sel_c);
  const LambdaRow& row_m = winning_row(sel_m);
  const LambdaRow& row_mu = winning_row(sel_mu);
  out.notes = {
      {"seed", std::to_string(seed)},
      {"lambda_star_omega_c", format_double(sel_c.lambda_star)},
      {"lambda_star_omega_m", format_double(sel_m.lambda_star)},
      {"lambda_star_mu", format_double(sel_mu.lambda_star)},
      {"mu_box_lower", format_double(1.0)},
      {"mu_box_upper", format_double(mu_box.upper[0])},
      {"invalid_nu", std::to_string(count_invalid(nu_hat))},
      {"converged", bool_note(row_c.converged && row_m.converged && row_mu.converged)},
  };
  if (details) details->stages.push_back({"mu", std::move(sel_mu)});
  return out;
}

Matrix algorithm2_od_direct(const Matrix& omega_c_hat, const Matrix& omega_m_hat,
                            const Calibration& calib) {
  if (!omega_c_hat.same_shape(omega_m_hat) || !omega_c_hat.same_shape(calib.c_g))
    fail(ErrorCode::invalid_argument, "denoised channels and calibration must share one shape");
  Matrix s_c = omega_c_hat;
  Matrix s_m = omega_m_hat;
  for (std::size_t i = 0; i < s_c.size(); ++i) {
    s_c[i] += calib.b_c[i];
    s_m[i] += calib.b_m[i];
  }
  return invert_od_algebraic(s_c, s_m, calib);
}

InversionProducts algorithm3(const PhotonImage& y_m, const Matrix& nu_hat, const Matrix& rho,
                             const Calibration& calib, const LambdaGrid& beta_grid,
                             const TvPipelineOptions& opts, std::uint64_t seed,
                             TvRunDetails* details) {
  check_pipeline_inputs(y_m, calib, rho);
  if (!nu_hat.same_shape(rho))
    fail(ErrorCode::invalid_argument, "nu_hat must match the count image shape");
  opts.solver.validate();
  const Grid& grid = calib.grid;

  Matrix nu_plus(nu_hat.rows(), nu_hat.cols());
  for (std::size_t i = 0; i < nu_plus.size(); ++i) nu_plus[i] = nu_hat[i] / (1.0 - rho[i]);
  Matrix lower = clamp_nonnegative(nu_plus);
  Matrix nu_model = clamp_nonnegative(nu_hat);

  // Uniform cap keeping the extinction fit strictly convex: the largest
  // scalar beta_bar with model(beta_bar * ones) still above the pixelwise
  // threshold sqrt(Y * b). Mirrors the lidar-ratio bound construction.
  double floor_value = 0.0;
  for (std::size_t i = 0; i < lower.size(); ++i) floor_value = std::max(floor_value, lower[i]);
  Matrix threshold(grid.n_range, grid.n_profiles);
  bool background_free = true;
  for (std::size_t i = 0; i < threshold.size(); ++i) {
    threshold[i] = std::sqrt(y_m.counts[i] * calib.b_m[i]);
    if (calib.b_m[i] > 0.0) background_free = false;
  }
  double beta_bar = kInf;
  if (!background_free) {
    auto feasible = [&](double bar) {
      EnergyImage h =
          reparam_h(Matrix::constant(grid.n_range, grid.n_profiles, bar), nu_model, calib);
      for (std::size_t i = 0; i < h.values.size(); ++i)
        if (!(h.values[i] > threshold[i])) return false;
      return true;
    };
    if (!feasible(floor_value))
      fail(ErrorCode::infeasible,
           "no strictly convex extinction box contains the backscatter lower bound: the scene is "
           "too opaque (or the supplied backscatter too large) for this fit");
    double lo = floor_value, hi = std::max(2.0 * floor_value, 1e-9);
    const double cap = 1e12;
    while (feasible(hi)) {
      lo = hi;
      hi *= 2.0;
      if (hi > cap) {
        lo = kInf;
        break;
      }
    }
    if (std::isfinite(lo))
      while ((hi - lo) > 1e-6 * std::max(lo, 1e-30)) {
        double mid = 0.5 * (lo + hi);
        (feasible(mid) ? lo : hi) = mid;
      }
    beta_bar = lo;
  }
  BoxConstraint box(lower, Matrix::constant(grid.n_range, grid.n_profiles, beta_bar));

  Calibration calib_half = half_calibration(calib);
  TrainObjectiveFactory factory = [&nu_model, &calib_half, &lower](
                                      const std::vector<PhotonImage>& train) {
    PhotonImage t = train[0];
    Objective obj{[t, &nu_model, &calib_half](const Matrix& x) {
                    return poisson_loss_beta(x, t, nu_model, calib_half);
                  },
                  [t, &nu_model, &calib_half](const Matrix& x) {
                    return poisson_loss_beta_grad(x, t, nu_model, calib_half);
                  }};
    return std::make_pair(std::move(obj), lower);
  };
  ValidationLoss validation = [&nu_model, &calib_half](const Matrix& est,
                                                       const std::vector<PhotonImage>& test) {
    return poisson_loss_beta(est, test[0], nu_model, calib_half);
  };
  SelectedLambda sel = select_lambda(factory, validation, {y_m}, beta_grid, box,
                                     exponential_stage_options(opts.solver),
                                     derive_seed(seed, kStreamBeta));

  Matrix beta_hat = sel.estimate;
  Matrix tau_hat = cumulative_integral(beta_hat, grid.dr);
  Matrix mu_hat(beta_hat.rows(), beta_hat.cols());
  for (std::size_t i = 0; i < mu_hat.size(); ++i)
    mu_hat[i] = nu_hat[i] > 0.0 ? (1.0 - rho[i]) * beta_hat[i] / nu_hat[i] : kNan;

  InversionProducts out;
  out.grid = grid;
  out.algorithm = "tv_alternative";
  out.nu_hat = nu_hat;
  out.nu_plus_hat = nu_plus;
  out.beta_hat = beta_hat;
  out.mu_hat = mu_hat;
  out.tau_hat = tau_hat;
  const LambdaRow& row = winning_row(sel);
  out.notes = {
      {"seed", std::to_string(seed)},
      {"lambda_star_beta", format_double(sel.lambda_star)},
      {"beta_box_lower_max", format_double(floor_value)},
      {"beta_box_upper", format_double(beta_bar)},
      {"invalid_nu", std::to_string(count_invalid(nu_hat))},
      {"converged", bool_note(row.converged)},
  };
  if (details) details->stages.push_back({"beta", std::move(sel)});
  return out;
}

}  // namespace hsrl
