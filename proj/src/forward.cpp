#include "hsrl/forward.hpp"

namespace hsrl {

namespace {

void check_same_grid(const Grid& a, const Grid& b, const char* what) {
  if (!(a == b)) fail(ErrorCode::invalid_argument, std::string(what) + ": grid mismatch");
}

void check_shape(const Matrix& m, const Grid& g, const char* what) {
  if (m.rows() != g.n_range || m.cols() != g.n_profiles)
    fail(ErrorCode::invalid_argument, std::string(what) + ": shape does not match grid");
}

}  // namespace

Matrix transmittance(const Matrix& beta, double dr) {
  Matrix q = cumulative_integral(beta, dr);
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = std::exp(-2.0 * q[i]);
  return q;
}

EnergyImage forward_combined(const ScatterScene& scene, const Calibration& calib) {
  check_same_grid(scene.grid, calib.grid, "forward_combined");
  Matrix t = transmittance(scene.beta, scene.grid.dr);
  Matrix s(t.rows(), t.cols());
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = calib.c_g[i] * (scene.nu[i] + calib.c_mc[i]) * t[i] + calib.b_c[i];
  return EnergyImage(scene.grid, Channel::combined, std::move(s));
}

EnergyImage forward_molecular(const ScatterScene& scene, const Calibration& calib) {
  check_same_grid(scene.grid, calib.grid, "forward_molecular");
  Matrix t = transmittance(scene.beta, scene.grid.dr);
  Matrix s(t.rows(), t.cols());
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = calib.c_g[i] * (calib.c_am * scene.nu[i] + calib.c_mm[i]) * t[i] + calib.b_m[i];
  return EnergyImage(scene.grid, Channel::molecular, std::move(s));
}

EnergyImage reparam_f(const Matrix& omega, const Matrix& background, const Grid& grid, Channel channel) {
  if (!omega.same_shape(background))
    fail(ErrorCode::invalid_argument, "reparam_f: omega/background shape mismatch");
  check_shape(omega, grid, "reparam_f");
  Matrix s(omega.rows(), omega.cols());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = omega[i] + background[i];
  return EnergyImage(grid, channel, std::move(s));
}

Matrix cbm_coefficient(const Matrix& nu_hat, const Calibration& calib) {
  check_shape(nu_hat, calib.grid, "cbm_coefficient");
  Matrix c(nu_hat.rows(), nu_hat.cols());
  for (std::size_t i = 0; i < c.size(); ++i)
    c[i] = calib.c_g[i] * (nu_hat[i] * calib.c_am + calib.c_mm[i]);
  return c;
}

EnergyImage reparam_g(const Matrix& mu_tilde, const Matrix& nu_hat, const Calibration& calib) {
  check_shape(mu_tilde, calib.grid, "reparam_g");
  if (!mu_tilde.same_shape(nu_hat)) fail(ErrorCode::invalid_argument, "reparam_g: shape mismatch");
  for (std::size_t i = 0; i < mu_tilde.size(); ++i) {
    if (!(mu_tilde[i] >= 1.0)) fail(ErrorCode::invalid_argument, "reparam_g: mu_tilde must be >= 1");
    if (!(nu_hat[i] >= 0.0)) fail(ErrorCode::invalid_argument, "reparam_g: nu_hat must be >= 0");
  }
  Matrix scaled(mu_tilde.rows(), mu_tilde.cols());
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = nu_hat[i] * mu_tilde[i];
  Matrix cbm = cbm_coefficient(nu_hat, calib);
  Matrix t = transmittance(scaled, calib.grid.dr);
  Matrix s(t.rows(), t.cols());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = cbm[i] * t[i] + calib.b_m[i];
  return EnergyImage(calib.grid, Channel::molecular, std::move(s));
}

EnergyImage reparam_h(const Matrix& beta, const Matrix& nu_hat, const Calibration& calib) {
  check_shape(beta, calib.grid, "reparam_h");
  if (!beta.same_shape(nu_hat)) fail(ErrorCode::invalid_argument, "reparam_h: shape mismatch");
  for (std::size_t i = 0; i < beta.size(); ++i)
    if (!(beta[i] >= 0.0)) fail(ErrorCode::invalid_argument, "reparam_h: beta must be >= 0");
  Matrix cbm = cbm_coefficient(nu_hat, calib);
  Matrix t = transmittance(beta, calib.grid.dr);
  Matrix s(t.rows(), t.cols());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = cbm[i] * t[i] + calib.b_m[i];
  return EnergyImage(calib.grid, Channel::molecular, std::move(s));
}

}  // namespace hsrl
