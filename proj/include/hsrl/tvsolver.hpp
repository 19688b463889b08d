#pragma once

#include <functional>
#include <vector>

#include "hsrl/core.hpp"

namespace hsrl {

/// Proximal-gradient solver knobs. prox_* control the inner TV subproblem,
/// the rest the outer loop.
struct SolverOptions {
  int max_iters = 200;
  double objective_tol = 1e-8;   // relative objective decrease
  double step_init = 1.0;
  double step_min = 1e-8;
  double step_max = 1e8;
  int bb_memory = 10;            // nonmonotone acceptance window
  int prox_iters = 100;
  double prox_tol = 1e-8;

  void validate() const;
};

/// Elementwise box [lower, upper]; upper entries may be +infinity.
struct BoxConstraint {
  Matrix lower;
  Matrix upper;

  BoxConstraint() = default;
  BoxConstraint(Matrix lo, Matrix hi);
  static BoxConstraint uniform(int rows, int cols, double lo, double hi);

  bool contains(const Matrix& x) const;
  Matrix clip(const Matrix& x) const;
};

/// Sum of absolute differences between vertical and horizontal neighbours
/// (the anisotropic total-variation seminorm).
double tv_seminorm(const Matrix& image);

struct TvProxResult {
  Matrix x;
  /// Dual certificate: x == z + div(dual) exactly, and both fields stay
  /// within [-weight, weight]. Vertical is (N-1) x K, horizontal N x (K-1).
  Matrix dual_vertical;
  Matrix dual_horizontal;
  /// Duality gap weight*TV(x) - <Dx, dual> of the returned pair; zero at the
  /// exact minimizer.
  double residual = 0.0;
  int iterations = 0;
  bool converged = true;
};

/// Approximate minimizer of 0.5*||x - z||^2 + weight*TV(x), computed by
/// projected gradient ascent (with momentum) on the dual with step 1/8.
/// Stops once the duality gap falls below prox_tol * max(1, ||z||_F).
TvProxResult tv_prox(const Matrix& z, double weight, const SolverOptions& opts);

/// Negative Poisson log-likelihood sum(f - Y*ln f) for the denoising model
/// f = omega + background. Infinite when some rate is nonpositive under a
/// positive count.
double poisson_loss_omega(const Matrix& omega, const PhotonImage& counts, const Matrix& background);
Matrix poisson_loss_omega_grad(const Matrix& omega, const PhotonImage& counts, const Matrix& background);

/// Same loss under the lidar-ratio model g(mu_tilde) (molecular channel).
double poisson_loss_mu(const Matrix& mu_tilde, const PhotonImage& counts_m, const Matrix& nu_hat,
                       const Calibration& calib);
Matrix poisson_loss_mu_grad(const Matrix& mu_tilde, const PhotonImage& counts_m, const Matrix& nu_hat,
                            const Calibration& calib);

/// Same loss under the extinction model h(beta) (molecular channel).
double poisson_loss_beta(const Matrix& beta, const PhotonImage& counts_m, const Matrix& nu_hat,
                         const Calibration& calib);
Matrix poisson_loss_beta_grad(const Matrix& beta, const PhotonImage& counts_m, const Matrix& nu_hat,
                              const Calibration& calib);

/// A differentiable data-fit term handed to the solver.
struct Objective {
  std::function<double(const Matrix&)> loss;
  std::function<Matrix(const Matrix&)> grad;
};

struct SolveTraceRow {
  int iteration = 0;
  double objective = 0.0;
  double step = 0.0;
  bool accepted = true;
};

struct SolveResult {
  Matrix estimate;          // best-objective iterate
  double objective = 0.0;   // its penalized objective value
  int iterations = 0;
  bool converged = false;
  std::vector<SolveTraceRow> trace;
};

/// Proximal-gradient minimization of loss(x) + lambda*TV(x) over a box:
/// x_{t+1} = clip(tv_prox(x_t - grad/alpha_t, lambda/alpha_t)), alpha_t from
/// the Barzilai-Borwein ratio under a nonmonotone sufficient-decrease test
/// (window bb_memory, step doubled on rejection). Terminates when the
/// objective's spread over the last bb_memory+1 adopted iterates drops below
/// objective_tol * max(1, |objective|), or at max_iters.
SolveResult spiral_minimize(const Objective& objective, const BoxConstraint& box, double lambda,
                            const Matrix& x0, const SolverOptions& opts);

/// Largest scalar mu_bar >= 1 keeping the lidar-ratio loss strictly convex
/// when the whole scene shares one ratio: g(mu_bar * ones) > sqrt(Y_m * b_m)
/// at every pixel. Returns the box [1, mu_bar]; the bound is +infinity when
/// the background (or nu_hat) vanishes and the condition cannot bind.
BoxConstraint mu_upper_bound(const PhotonImage& counts_m, const Matrix& nu_hat, const Calibration& calib);

/// Dense Hessian of the single-column lidar-ratio loss at mu_tilde (column
/// `col` of the inputs): 4 * diag(nu) Q^T D Q diag(nu). Test/diagnostic use.
Matrix dense_mu_hessian_column(const Matrix& mu_tilde, const PhotonImage& counts_m,
                               const Matrix& nu_hat, const Calibration& calib, int col);

/// Count of pixels violating the strict-convexity condition g > sqrt(Y*b)
/// at mu_tilde (0 means the PD criterion holds scene-wide).
int convexity_violations(const Matrix& mu_tilde, const PhotonImage& counts_m, const Matrix& nu_hat,
                         const Calibration& calib);

}  // namespace hsrl
