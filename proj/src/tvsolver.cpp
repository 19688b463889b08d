#include "hsrl/tvsolver.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "hsrl/forward.hpp"

namespace hsrl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Sufficient-decrease constant of the nonmonotone acceptance test.
constexpr double kSigma = 1e-4;
// Lipschitz constant of div(grad(.)) on a 2-D grid; 1/8 is the safe dual step.
constexpr double kDualStep = 0.125;

double frobenius(const Matrix& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) s += m[i] * m[i];
  return std::sqrt(s);
}

// x = z + div(p, q): the primal point determined by the dual fields. With
// div = -D^T (D the forward-difference operator), the inner minimization of
// 1/2 ||x - z||^2 - <x, div(p,q)> lands exactly here, and the optimal dual
// aligns with Dx so that <Dx, (p,q)> = weight * TV(x).
void primal_from_dual(const Matrix& z, const Matrix& p, const Matrix& q, Matrix& x) {
  int rows = z.rows(), cols = z.cols();
  for (int n = 0; n < rows; ++n)
    for (int k = 0; k < cols; ++k) {
      double div = 0.0;
      if (n < rows - 1) div += p(n, k);
      if (n > 0) div -= p(n - 1, k);
      if (k < cols - 1) div += q(n, k);
      if (k > 0) div -= q(n, k - 1);
      x(n, k) = z(n, k) + div;
    }
}

// Duality gap weight*TV(x) - <Dx, (p,q)>; nonnegative, zero at the optimum.
double duality_gap(const Matrix& x, const Matrix& p, const Matrix& q, double weight) {
  double gap = 0.0;
  for (int n = 0; n + 1 < x.rows(); ++n)
    for (int k = 0; k < x.cols(); ++k) {
      double d = x(n + 1, k) - x(n, k);
      gap += weight * std::abs(d) - d * p(n, k);
    }
  for (int n = 0; n < x.rows(); ++n)
    for (int k = 0; k + 1 < x.cols(); ++k) {
      double d = x(n, k + 1) - x(n, k);
      gap += weight * std::abs(d) - d * q(n, k);
    }
  return gap;
}

}  // namespace

void SolverOptions::validate() const {
  if (max_iters < 1 || prox_iters < 1) fail(ErrorCode::invalid_argument, "iteration caps must be positive");
  if (!(objective_tol > 0.0) || !(prox_tol > 0.0))
    fail(ErrorCode::invalid_argument, "tolerances must be positive");
  if (!(step_min > 0.0) || !(step_min <= step_max))
    fail(ErrorCode::invalid_argument, "step bounds must satisfy 0 < min <= max");
  if (!(step_init > 0.0)) fail(ErrorCode::invalid_argument, "step_init must be positive");
  if (bb_memory < 1) fail(ErrorCode::invalid_argument, "bb_memory must be at least 1");
}

BoxConstraint::BoxConstraint(Matrix lo, Matrix hi) : lower(std::move(lo)), upper(std::move(hi)) {
  if (!lower.same_shape(upper)) fail(ErrorCode::invalid_argument, "box bounds must share one shape");
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (std::isnan(lower[i]) || std::isnan(upper[i]))
      fail(ErrorCode::invalid_argument, "box bounds must not be NaN");
    if (!(lower[i] <= upper[i]))
      fail(ErrorCode::invalid_argument, "box lower bound exceeds upper bound");
  }
}

BoxConstraint BoxConstraint::uniform(int rows, int cols, double lo, double hi) {
  return BoxConstraint(Matrix::constant(rows, cols, lo), Matrix::constant(rows, cols, hi));
}

bool BoxConstraint::contains(const Matrix& x) const {
  if (!x.same_shape(lower)) return false;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(x[i] >= lower[i] && x[i] <= upper[i])) return false;
  return true;
}

Matrix BoxConstraint::clip(const Matrix& x) const {
  if (!x.same_shape(lower)) fail(ErrorCode::invalid_argument, "box and point shapes differ");
  Matrix out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(out[i], lower[i]), upper[i]);
  return out;
}

double tv_seminorm(const Matrix& image) {
  double tv = 0.0;
  for (int n = 0; n + 1 < image.rows(); ++n)
    for (int k = 0; k < image.cols(); ++k) tv += std::abs(image(n + 1, k) - image(n, k));
  for (int n = 0; n < image.rows(); ++n)
    for (int k = 0; k + 1 < image.cols(); ++k) tv += std::abs(image(n, k + 1) - image(n, k));
  return tv;
}

TvProxResult tv_prox(const Matrix& z, double weight, const SolverOptions& opts) {
  opts.validate();
  if (!(weight >= 0.0)) fail(ErrorCode::invalid_argument, "tv_prox weight must be nonnegative");
  int rows = z.rows(), cols = z.cols();
  if (rows < 1 || cols < 1) fail(ErrorCode::invalid_argument, "tv_prox needs a nonempty image");

  TvProxResult result;
  result.dual_vertical = Matrix(std::max(rows - 1, 0), cols);
  result.dual_horizontal = Matrix(rows, std::max(cols - 1, 0));
  if (weight == 0.0) {
    result.x = z;
    result.converged = true;
    return result;
  }

  // Fast gradient projection on the dual: maximize the concave dual by
  // projected gradient steps with Nesterov momentum; the primal iterate
  // x = z + div(dual) is exact for whatever dual we stop at.
  Matrix p(std::max(rows - 1, 0), cols), q(rows, std::max(cols - 1, 0));
  Matrix p_prev = p, q_prev = q;
  Matrix yp = p, yq = q;
  Matrix x(rows, cols);
  double t = 1.0;
  double tol = opts.prox_tol * std::max(1.0, frobenius(z));

  int iter = 0;
  double gap = kInf;
  while (iter < opts.prox_iters) {
    ++iter;
    primal_from_dual(z, yp, yq, x);
    for (int n = 0; n + 1 < rows; ++n)
      for (int k = 0; k < cols; ++k) {
        double v = yp(n, k) + kDualStep * (x(n + 1, k) - x(n, k));
        p(n, k) = std::min(std::max(v, -weight), weight);
      }
    for (int n = 0; n < rows; ++n)
      for (int k = 0; k + 1 < cols; ++k) {
        double v = yq(n, k) + kDualStep * (x(n, k + 1) - x(n, k));
        q(n, k) = std::min(std::max(v, -weight), weight);
      }

    primal_from_dual(z, p, q, x);
    gap = duality_gap(x, p, q, weight);
    if (gap <= tol) break;

    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    double momentum = (t - 1.0) / t_next;
    // Adaptive restart: when the extrapolated direction opposes the latest
    // projected step, drop the momentum instead of overshooting. This keeps
    // the accelerated scheme linearly convergent near the optimum.
    double restart_dot = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) restart_dot += (yp[i] - p[i]) * (p[i] - p_prev[i]);
    for (std::size_t i = 0; i < q.size(); ++i) restart_dot += (yq[i] - q[i]) * (q[i] - q_prev[i]);
    if (restart_dot > 0.0) {
      t_next = 1.0;
      momentum = 0.0;
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      yp[i] = p[i] + momentum * (p[i] - p_prev[i]);
      p_prev[i] = p[i];
    }
    for (std::size_t i = 0; i < q.size(); ++i) {
      yq[i] = q[i] + momentum * (q[i] - q_prev[i]);
      q_prev[i] = q[i];
    }
    t = t_next;
  }

  primal_from_dual(z, p, q, x);
  result.x = std::move(x);
  result.dual_vertical = std::move(p);
  result.dual_horizontal = std::move(q);
  result.residual = gap;
  result.iterations = iter;
  result.converged = gap <= tol;
  return result;
}

double poisson_loss_omega(const Matrix& omega, const PhotonImage& counts, const Matrix& background) {
  if (!omega.same_shape(counts.counts) || !omega.same_shape(background))
    fail(ErrorCode::invalid_argument, "omega, counts, and background must share one shape");
  double loss = 0.0;
  for (std::size_t i = 0; i < omega.size(); ++i) {
    double f = omega[i] + background[i];
    double y = counts.counts[i];
    if (y > 0.0) {
      if (!(f > 0.0)) return kInf;
      loss += f - y * std::log(f);
    } else {
      loss += f;
    }
  }
  return loss;
}

Matrix poisson_loss_omega_grad(const Matrix& omega, const PhotonImage& counts, const Matrix& background) {
  if (!omega.same_shape(counts.counts) || !omega.same_shape(background))
    fail(ErrorCode::invalid_argument, "omega, counts, and background must share one shape");
  Matrix grad(omega.rows(), omega.cols());
  for (std::size_t i = 0; i < omega.size(); ++i) {
    double f = omega[i] + background[i];
    grad[i] = 1.0 - counts.counts[i] / f;
  }
  return grad;
}

namespace {

// Shared core of the mu_tilde and beta losses: the model is
// coeff * exp(-2 Q field) + b_m, with field = nu_hat .* mu_tilde or beta.
double exponential_model_loss(const EnergyImage& model, const PhotonImage& counts) {
  double loss = 0.0;
  for (std::size_t i = 0; i < model.values.size(); ++i) {
    double f = model.values[i];
    double y = counts.counts[i];
    loss += (y > 0.0) ? f - y * std::log(f) : f;
  }
  return loss;
}

Matrix exponential_model_grad(const EnergyImage& model, const PhotonImage& counts,
                              const Calibration& calib, const Matrix& chain_scale) {
  const Matrix& g = model.values;
  Matrix inner(g.rows(), g.cols());
  for (std::size_t i = 0; i < g.size(); ++i) {
    double residual = 1.0 - counts.counts[i] / g[i];
    inner[i] = (g[i] - calib.b_m[i]) * residual;
  }
  Matrix grad = adjoint_cumulative_integral(inner, calib.grid.dr);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= -2.0 * chain_scale[i];
  return grad;
}

void check_molecular_inputs(const Matrix& x, const PhotonImage& counts_m, const Matrix& nu_hat,
                            const Calibration& calib) {
  if (counts_m.channel != Channel::molecular)
    fail(ErrorCode::invalid_argument, "exponential-model losses fit the molecular channel");
  if (!(counts_m.grid == calib.grid))
    fail(ErrorCode::invalid_argument, "counts and calibration must share one grid");
  if (!x.same_shape(counts_m.counts) || !nu_hat.same_shape(x))
    fail(ErrorCode::invalid_argument, "estimate, counts, and nu_hat must share one shape");
}

}  // namespace

double poisson_loss_mu(const Matrix& mu_tilde, const PhotonImage& counts_m, const Matrix& nu_hat,
                       const Calibration& calib) {
  check_molecular_inputs(mu_tilde, counts_m, nu_hat, calib);
  return exponential_model_loss(reparam_g(mu_tilde, nu_hat, calib), counts_m);
}

Matrix poisson_loss_mu_grad(const Matrix& mu_tilde, const PhotonImage& counts_m, const Matrix& nu_hat,
                            const Calibration& calib) {
  check_molecular_inputs(mu_tilde, counts_m, nu_hat, calib);
  return exponential_model_grad(reparam_g(mu_tilde, nu_hat, calib), counts_m, calib, nu_hat);
}

double poisson_loss_beta(const Matrix& beta, const PhotonImage& counts_m, const Matrix& nu_hat,
                         const Calibration& calib) {
  check_molecular_inputs(beta, counts_m, nu_hat, calib);
  return exponential_model_loss(reparam_h(beta, nu_hat, calib), counts_m);
}

Matrix poisson_loss_beta_grad(const Matrix& beta, const PhotonImage& counts_m, const Matrix& nu_hat,
                              const Calibration& calib) {
  check_molecular_inputs(beta, counts_m, nu_hat, calib);
  Matrix ones = Matrix::constant(beta.rows(), beta.cols(), 1.0);
  return exponential_model_grad(reparam_h(beta, nu_hat, calib), counts_m, calib, ones);
}

SolveResult spiral_minimize(const Objective& objective, const BoxConstraint& box, double lambda,
                            const Matrix& x0, const SolverOptions& opts) {
  opts.validate();
  if (!(lambda >= 0.0)) fail(ErrorCode::invalid_argument, "lambda must be nonnegative");
  if (!objective.loss || !objective.grad)
    fail(ErrorCode::invalid_argument, "objective must provide loss and gradient");
  if (!box.contains(x0)) fail(ErrorCode::infeasible, "x0 violates the box constraint");

  auto penalized = [&](const Matrix& x) { return objective.loss(x) + lambda * tv_seminorm(x); };

  Matrix x = x0;
  double phi = penalized(x);
  if (!std::isfinite(phi)) fail(ErrorCode::numeric_failure, "objective is not finite at x0");
  Matrix grad = objective.grad(x);

  SolveResult result;
  result.estimate = x;
  result.objective = phi;
  result.trace.reserve(static_cast<std::size_t>(opts.max_iters));

  std::deque<double> window{phi};
  std::deque<double> stagnant{phi};
  double alpha = std::min(std::max(opts.step_init, opts.step_min), opts.step_max);

  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    double recent_max = *std::max_element(window.begin(), window.end());

    Matrix candidate;
    double phi_new = kInf;
    bool accepted = false;
    // The clamp applies to the Barzilai-Borwein seed only; the acceptance
    // loop may escalate well past step_max when the local curvature demands
    // shorter moves than the clamp allows (steep exponential models).
    double alpha_used = alpha;
    for (int backtrack = 0; backtrack < 60; ++backtrack) {
      Matrix z(x.rows(), x.cols());
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - grad[i] / alpha_used;
      candidate = box.clip(tv_prox(z, lambda / alpha_used, opts).x);
      phi_new = penalized(candidate);

      double dist2 = 0.0;
      for (std::size_t i = 0; i < candidate.size(); ++i) {
        double d = candidate[i] - x[i];
        dist2 += d * d;
      }
      if (std::isfinite(phi_new) && phi_new <= recent_max - 0.5 * kSigma * alpha_used * dist2) {
        accepted = true;
        break;
      }
      if (!std::isfinite(alpha_used * 2.0)) break;
      alpha_used *= 2.0;
    }

    result.trace.push_back({iter, phi_new, alpha_used, accepted});
    result.iterations = iter;

    // A candidate that is still non-finite after exhausting backtracks would
    // poison the iteration; stop on the best iterate found so far.
    if (!std::isfinite(phi_new)) break;

    Matrix grad_new = objective.grad(candidate);

    // Barzilai-Borwein curvature estimate for the next step.
    double sty = 0.0, sts = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double s = candidate[i] - x[i];
      sty += s * (grad_new[i] - grad[i]);
      sts += s * s;
    }
    if (sts > 0.0 && std::isfinite(sty) && sty > 0.0)
      alpha = std::min(std::max(sty / sts, opts.step_min), opts.step_max);
    else
      alpha = std::min(std::max(opts.step_init, opts.step_min), opts.step_max);

    x = std::move(candidate);
    grad = std::move(grad_new);
    phi = phi_new;

    window.push_back(phi);
    if (static_cast<int>(window.size()) > opts.bb_memory) window.pop_front();

    // Track the best iterate, treating objectives within a few ulp as ties
    // and preferring the later iterate: near a minimizer the evaluated
    // objective is flat to rounding noise while BB steps keep improving x.
    double best_tol = 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(result.objective));
    if (phi <= result.objective + best_tol) {
      result.objective = std::min(result.objective, phi);
      result.estimate = x;
    }

    // Stop once the objective has stagnated across the whole acceptance
    // window, not just between two iterates: BB steps keep polishing the
    // estimate for several iterations after the objective saturates in
    // double precision.
    stagnant.push_back(phi);
    std::size_t span = static_cast<std::size_t>(std::max(opts.bb_memory, 2)) + 1;
    if (stagnant.size() > span) stagnant.pop_front();
    if (stagnant.size() == span) {
      auto [lo_it, hi_it] = std::minmax_element(stagnant.begin(), stagnant.end());
      if (*hi_it - *lo_it <= opts.objective_tol * std::max(1.0, std::abs(phi))) {
        result.converged = true;
        break;
      }
    }
  }
  return result;
}

BoxConstraint mu_upper_bound(const PhotonImage& counts_m, const Matrix& nu_hat, const Calibration& calib) {
  check_molecular_inputs(nu_hat, counts_m, nu_hat, calib);
  int rows = nu_hat.rows(), cols = nu_hat.cols();

  // Threshold sqrt(Y*b) of the strict-convexity condition, per pixel.
  Matrix threshold(rows, cols);
  bool background_free = true;
  for (std::size_t i = 0; i < threshold.size(); ++i) {
    threshold[i] = std::sqrt(counts_m.counts[i] * calib.b_m[i]);
    if (calib.b_m[i] > 0.0) background_free = false;
  }
  Matrix lower = Matrix::constant(rows, cols, 1.0);
  if (background_free) return BoxConstraint(std::move(lower), Matrix::constant(rows, cols, kInf));

  auto feasible = [&](double mu_bar) {
    EnergyImage g = reparam_g(Matrix::constant(rows, cols, mu_bar), nu_hat, calib);
    for (std::size_t i = 0; i < g.values.size(); ++i)
      if (!(g.values[i] > threshold[i])) return false;
    return true;
  };

  if (!feasible(1.0))
    fail(ErrorCode::infeasible,
         "strict convexity fails even at lidar ratio 1: the scene is too opaque for a feasible bound");

  // The model dims monotonically in mu_bar, so feasibility is an interval
  // [1, mu_star): double to bracket, then bisect.
  double lo = 1.0, hi = 2.0;
  const double cap = 1e12;
  while (feasible(hi)) {
    lo = hi;
    hi *= 2.0;
    if (hi > cap) return BoxConstraint(std::move(lower), Matrix::constant(rows, cols, kInf));
  }
  while ((hi - lo) > 1e-6 * lo) {
    double mid = 0.5 * (lo + hi);
    (feasible(mid) ? lo : hi) = mid;
  }
  return BoxConstraint(std::move(lower), Matrix::constant(rows, cols, lo));
}

Matrix dense_mu_hessian_column(const Matrix& mu_tilde, const PhotonImage& counts_m,
                               const Matrix& nu_hat, const Calibration& calib, int col) {
  check_molecular_inputs(mu_tilde, counts_m, nu_hat, calib);
  if (col < 0 || col >= mu_tilde.cols()) fail(ErrorCode::invalid_argument, "column index out of range");
  int n_bins = mu_tilde.rows();
  EnergyImage model = reparam_g(mu_tilde, nu_hat, calib);

  // Diagonal weights D_nn = (g - b)*(1 - Y*b/g^2), then suffix sums so that
  // (Q^T D Q)_{ij} = dr^2 * sum_{n >= max(i,j)} D_nn.
  std::vector<double> suffix(n_bins + 1, 0.0);
  for (int n = n_bins - 1; n >= 0; --n) {
    double g = model.values(n, col);
    double d = (g - calib.b_m(n, col)) * (1.0 - counts_m.counts(n, col) * calib.b_m(n, col) / (g * g));
    suffix[n] = suffix[n + 1] + d;
  }
  double dr2 = calib.grid.dr * calib.grid.dr;
  Matrix hessian(n_bins, n_bins);
  for (int i = 0; i < n_bins; ++i)
    for (int j = 0; j < n_bins; ++j)
      hessian(i, j) = 4.0 * nu_hat(i, col) * nu_hat(j, col) * dr2 * suffix[std::max(i, j)];
  return hessian;
}

int convexity_violations(const Matrix& mu_tilde, const PhotonImage& counts_m, const Matrix& nu_hat,
                         const Calibration& calib) {
  check_molecular_inputs(mu_tilde, counts_m, nu_hat, calib);
  EnergyImage model = reparam_g(mu_tilde, nu_hat, calib);
  int violations = 0;
  for (std::size_t i = 0; i < model.values.size(); ++i)
    if (!(model.values[i] > std::sqrt(counts_m.counts[i] * calib.b_m[i]))) ++violations;
  return violations;
}

}  // namespace hsrl
