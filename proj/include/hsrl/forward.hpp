#pragma once

#include "hsrl/core.hpp"

namespace hsrl {

/// Combined-channel model: S_c = C_g * (nu + C_mc) * exp(-2 Q beta) + b_c,
/// every product pointwise, Q the columnwise cumulative integral at dr.
EnergyImage forward_combined(const ScatterScene& scene, const Calibration& calib);

/// Molecular-channel model: S_m = C_g * (c_am * nu + C_mm) * exp(-2 Q beta) + b_m.
EnergyImage forward_molecular(const ScatterScene& scene, const Calibration& calib);

/// Denoising model: the rate is the signal energy plus its channel background.
EnergyImage reparam_f(const Matrix& omega, const Matrix& background, const Grid& grid, Channel channel);

/// Molecular-channel coefficient C_bm = C_g * (nu_hat * c_am + C_mm), fixed
/// once nu_hat is known; cached by callers across solver iterations.
Matrix cbm_coefficient(const Matrix& nu_hat, const Calibration& calib);

/// Lidar-ratio model: g(mu_tilde) = C_bm * exp(-2 Q[nu_hat * mu_tilde]) + b_m,
/// defined for mu_tilde >= 1.
EnergyImage reparam_g(const Matrix& mu_tilde, const Matrix& nu_hat, const Calibration& calib);

/// Extinction model: h(beta) = C_bm * exp(-2 Q beta) + b_m. The coefficient is
/// the same C_bm as reparam_g's; the fit is against molecular counts.
EnergyImage reparam_h(const Matrix& beta, const Matrix& nu_hat, const Calibration& calib);

/// Two-way transmittance exp(-2 Q beta); in (0, 1] for beta >= 0.
Matrix transmittance(const Matrix& beta, double dr);

}  // namespace hsrl
