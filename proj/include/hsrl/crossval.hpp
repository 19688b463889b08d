#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "hsrl/core.hpp"
#include "hsrl/tvsolver.hpp"

namespace hsrl {

/// Candidate regularization weights for the cross-validated sweep.
struct LambdaGrid {
  std::vector<double> values;

  /// Validates: nonempty, nonnegative, strictly increasing.
  explicit LambdaGrid(std::vector<double> v);

  /// {10^-2, 10^-1.8, ..., 10^0.8, 10^1}: the default 16-point log sweep
  /// used by the experiment harness.
  static LambdaGrid default_sweep();
};

struct LambdaRow {
  double lambda = 0.0;
  double train_objective = 0.0;  // penalized objective reached on the train half
  double test_loss = 0.0;        // validation loss of the estimate on the test half
  int iterations = 0;
  bool converged = false;
  bool solved = false;  // false when the solve (or validation) raised an error
};

struct SelectedLambda {
  double lambda_star = 0.0;
  Matrix estimate;  // the solve output at lambda_star
  std::vector<LambdaRow> table;
  std::vector<SolveTraceRow> trace_at_star;  // iteration log of the winning solve
};

/// Builds the train-half objective and its starting point. The factory is
/// responsible for rate scaling: the train counts have half the full-data
/// expectation, so model constants that act as expected counts (gain
/// products, backgrounds) must be scaled by the thinning probability.
using TrainObjectiveFactory =
    std::function<std::pair<Objective, Matrix>(const std::vector<PhotonImage>& train_counts)>;

/// Poisson loss of an estimate against the held-out half; the implementation
/// must scale model constants by (1 - p) symmetrically to the train side.
using ValidationLoss =
    std::function<double(const Matrix& estimate, const std::vector<PhotonImage>& test_counts)>;

/// Regularizer selection by photon-thinning cross-validation: thins every
/// channel once (p = 0.5, sub-seed per channel), solves the penalized train
/// problem for each lambda in the grid, scores each estimate on the held-out
/// half, and returns the argmin with ties broken toward smaller lambda.
/// Solve failures are recorded per lambda; only if every lambda fails does
/// the call raise an error listing them.
SelectedLambda select_lambda(const TrainObjectiveFactory& factory, const ValidationLoss& validation,
                             const std::vector<PhotonImage>& counts, const LambdaGrid& grid,
                             const BoxConstraint& box, const SolverOptions& opts, std::uint64_t seed);

}  // namespace hsrl
