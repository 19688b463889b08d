#include "hsrl/metrics.hpp"

#include <cmath>
#include <cstddef>

namespace hsrl {

namespace {

double to_db(double squared) { return 20.0 * std::log10(std::sqrt(squared)); }

}  // namespace

ErrorReport monte_carlo_errors(const Matrix& truth, const std::vector<Matrix>& estimates) {
  if (estimates.empty())
    fail(ErrorCode::invalid_argument, "monte_carlo_errors: at least one estimate is required");
  for (const Matrix& e : estimates)
    if (!e.same_shape(truth))
      fail(ErrorCode::invalid_argument, "monte_carlo_errors: estimate shape differs from truth");

  const std::size_t n_pix = truth.size();
  if (n_pix == 0) fail(ErrorCode::invalid_argument, "monte_carlo_errors: empty truth field");

  // Common support: finite in truth and in every run.
  std::vector<char> valid(n_pix, 1);
  std::size_t n_valid = 0;
  for (std::size_t i = 0; i < n_pix; ++i) valid[i] = std::isfinite(truth[i]) ? 1 : 0;
  for (const Matrix& e : estimates)
    for (std::size_t i = 0; i < n_pix; ++i)
      if (!std::isfinite(e[i])) valid[i] = 0;
  for (std::size_t i = 0; i < n_pix; ++i) n_valid += valid[i];
  if (n_valid == 0)
    fail(ErrorCode::invalid_argument, "monte_carlo_errors: every pixel is invalid in some run");

  // Mean accumulated around the first run so identical runs yield their
  // common value exactly (sum-then-divide would pick up rounding).
  const double n = static_cast<double>(estimates.size());
  Matrix mean_est(truth.rows(), truth.cols(), 0.0);
  for (const Matrix& e : estimates)
    for (std::size_t i = 0; i < n_pix; ++i)
      if (valid[i]) mean_est[i] += e[i] - estimates.front()[i];
  for (std::size_t i = 0; i < n_pix; ++i)
    mean_est[i] = valid[i] ? estimates.front()[i] + mean_est[i] / n : 0.0;

  ErrorReport report;
  for (std::size_t i = 0; i < n_pix; ++i) {
    if (!valid[i]) continue;
    double d = truth[i] - mean_est[i];
    report.bias_sq += d * d;
  }
  for (const Matrix& e : estimates) {
    for (std::size_t i = 0; i < n_pix; ++i) {
      if (!valid[i]) continue;
      double dt = truth[i] - e[i];
      double dm = e[i] - mean_est[i];
      report.mse += dt * dt;
      report.variance += dm * dm;
    }
  }
  report.mse /= n;
  report.variance /= n;
  report.rmse_db = to_db(report.mse);
  report.bias_db = to_db(report.bias_sq);
  report.std_db = to_db(report.variance);
  report.n_runs = static_cast<int>(estimates.size());
  report.invalid_fraction = 1.0 - static_cast<double>(n_valid) / static_cast<double>(n_pix);
  return report;
}

std::string score_table_csv(const std::vector<ScoreRow>& rows) {
  std::string out = "field,algorithm,rmse_db,bias_db,std_db,invalid_fraction,n_runs\n";
  for (const ScoreRow& row : rows) {
    out += row.field;
    out += ',';
    out += row.algorithm;
    out += ',';
    out += format_double(row.report.rmse_db);
    out += ',';
    out += format_double(row.report.bias_db);
    out += ',';
    out += format_double(row.report.std_db);
    out += ',';
    out += format_double(row.report.invalid_fraction);
    out += ',';
    out += std::to_string(row.report.n_runs);
    out += '\n';
  }
  return out;
}

}  // namespace hsrl
