#pragma once

#include <string>
#include <vector>

#include "hsrl/core.hpp"

namespace hsrl {

/// Monte-Carlo error summary for repeated estimates of one truth field.
/// All norms are squared Frobenius norms over the valid-pixel mask; the
/// decomposition mse = bias_sq + variance is exact (population variance).
struct ErrorReport {
  double mse = 0.0;       // mean over runs of ||truth - estimate||^2
  double bias_sq = 0.0;   // ||truth - mean estimate||^2
  double variance = 0.0;  // mean over runs of ||estimate - mean estimate||^2
  double rmse_db = 0.0;   // 20 log10 sqrt(mse)
  double bias_db = 0.0;   // 20 log10 sqrt(bias_sq)
  double std_db = 0.0;    // 20 log10 sqrt(variance)
  int n_runs = 0;
  double invalid_fraction = 0.0;  // share of pixels excluded from the mask
};

/// Scores a set of Monte-Carlo estimates against the truth field. A pixel
/// enters the valid mask only when it is finite in the truth and in every
/// estimate, which keeps all three squared norms on one common support (the
/// decomposition identity holds exactly there). Errors if no estimates are
/// given, shapes differ, or the mask ends up empty.
ErrorReport monte_carlo_errors(const Matrix& truth, const std::vector<Matrix>& estimates);

/// One summary line of a score table.
struct ScoreRow {
  std::string field;
  std::string algorithm;
  ErrorReport report;
};

/// Renders rows as CSV with header
/// field,algorithm,rmse_db,bias_db,std_db,invalid_fraction,n_runs.
/// Infinite dB values appear as literal inf/-inf.
std::string score_table_csv(const std::vector<ScoreRow>& rows);

}  // namespace hsrl
