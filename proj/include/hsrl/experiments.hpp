#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hsrl/crossval.hpp"
#include "hsrl/metrics.hpp"
#include "hsrl/standard.hpp"
#include "hsrl/tvsolver.hpp"

namespace hsrl {

/// Shared knobs for the Monte-Carlo experiment harness. The scene is always
/// the synthetic cirrus benchmark at its default recipe; snr_factor rescales
/// the gain and background of the second comparison (emulating accumulated
/// oversampling), and mu_upper replaces the ratio box cap there.
struct ExperimentOptions {
  int runs = 10;
  std::uint64_t seed = 1;
  std::string out_dir;  // empty: nothing written, results only returned
  LambdaGrid lambda_grid = LambdaGrid::default_sweep();
  SolverOptions solver;
  SgOptions sg_temporal{5, 1};
  SgOptions sg_range{15, 1};
  double snr_factor = 48.0;
  double mu_upper = 100.0;

  void validate() const;
};

/// Per-run bookkeeping alongside the aggregate scores: invalid-pixel counts
/// of the run's products and whether every solver stage converged.
struct RunRecord {
  int run = 0;
  std::uint64_t seed = 0;
  std::string algorithm;
  int invalid_tau = 0;  // pixels without a usable transmittance
  int invalid_nu = 0;
  bool converged = true;
};

struct ExperimentResult {
  std::vector<ScoreRow> summary;  // one row per field per algorithm
  std::vector<RunRecord> runs;    // one row per run per algorithm
};

/// Native-resolution comparison on the cirrus scene: the algebraic baseline
/// as-is, the baseline on 2x2 photon-accumulated counts (products replicated
/// back to the native grid for scoring), and TV channel denoising with the
/// closed-form combination. Scores nu_plus and tau.
ExperimentResult experiment_one(const ExperimentOptions& opts);

/// Elevated-count comparison (gain and backgrounds scaled by snr_factor):
/// baseline, the two-stage TV inversion (ratio box capped at mu_upper), and
/// the extinction-first variant fed the TV backscatter. Scores nu_plus,
/// beta, mu and tau.
ExperimentResult experiment_two(const ExperimentOptions& opts);

/// Noiseless single-profile demonstration of smoothing bias: wide-window
/// Savitzky-Golay smoothing of the true optical depth inflates the derived
/// extinction below the cloud and with it the implied lidar ratio.
struct FilterBiasProfile {
  int column = 0;
  std::vector<double> range_m;
  std::vector<double> beta_true;
  std::vector<double> beta_smoothed;
  std::vector<double> mu_true;
  std::vector<double> mu_implied;
};
FilterBiasProfile experiment_filter_bias(const ExperimentOptions& opts);

}  // namespace hsrl
