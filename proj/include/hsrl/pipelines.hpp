#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hsrl/core.hpp"
#include "hsrl/crossval.hpp"
#include "hsrl/tvsolver.hpp"

namespace hsrl {

/// Knobs shared by the TV-penalized pipelines.
struct TvPipelineOptions {
  SolverOptions solver;
  /// When set, replaces the convexity-derived upper bound of the lidar-ratio
  /// box (the lower bound stays at 1). Must be at least 1.
  std::optional<double> mu_upper;
};

/// One cross-validation stage of a pipeline run, kept for reporting: the
/// stage name, the winning lambda's solve, and the per-lambda table.
struct StageSelection {
  std::string stage;
  SelectedLambda selection;
};

/// Optional side-channel for callers that need more than InversionProducts:
/// per-stage lambda tables/traces and the denoised channel signals.
struct TvRunDetails {
  std::vector<StageSelection> stages;
  Matrix omega_c_hat;  // full-scale denoised signals; set by the channel
  Matrix omega_m_hat;  // denoising stage, empty for extinction-first runs
};

/// Cross-validated TV denoising of both channels under the signal-plus-
/// background model. Returns the full-scale signal estimates (omega_c_hat,
/// omega_m_hat); stage tables land in `details` when provided.
std::pair<Matrix, Matrix> denoise_channels(const PhotonImage& y_c, const PhotonImage& y_m,
                                           const Calibration& calib, const LambdaGrid& grid,
                                           const SolverOptions& opts, std::uint64_t seed,
                                           TvRunDetails* details = nullptr);

/// Algebraic combination of denoised channel signals into the parallel
/// backscatter cross-section. Pixels whose combination denominator
/// omega_m - omega_c * c_am is not strictly positive come back invalid.
Matrix combine_channels_nu(const Matrix& omega_c_hat, const Matrix& omega_m_hat,
                           const Calibration& calib);

/// Two-stage TV inversion: cross-validated channel denoising, algebraic
/// combination into nu_hat, then a cross-validated lidar-ratio fit against
/// the molecular counts under the attenuation model. Produces nu_hat,
/// nu_plus_hat, mu_hat, beta_hat and tau_hat; invalid nu_hat pixels (treated
/// as zero backscatter during the ratio fit) stay invalid in the products.
InversionProducts algorithm2(const PhotonImage& y_c, const PhotonImage& y_m,
                             const Calibration& calib, const Matrix& rho,
                             const LambdaGrid& omega_grid, const LambdaGrid& mu_grid,
                             const TvPipelineOptions& opts, std::uint64_t seed,
                             TvRunDetails* details = nullptr);

/// Optical depth straight from the denoised channels: add the backgrounds
/// back and apply the closed-form two-channel inversion. Pixels with a
/// nonpositive log argument come back invalid.
Matrix algorithm2_od_direct(const Matrix& omega_c_hat, const Matrix& omega_m_hat,
                            const Calibration& calib);

/// Extinction-first variant: given nu_hat from an earlier inversion, fit
/// total backscatter beta over the box [max(nu_hat/(1-rho), 0), beta_bar]
/// against the molecular counts, then derive the lidar ratio from the fit.
/// mu_hat is invalid wherever the supplied nu_hat is nonpositive or invalid.
InversionProducts algorithm3(const PhotonImage& y_m, const Matrix& nu_hat, const Matrix& rho,
                             const Calibration& calib, const LambdaGrid& beta_grid,
                             const TvPipelineOptions& opts, std::uint64_t seed,
                             TvRunDetails* details = nullptr);

}  // namespace hsrl
