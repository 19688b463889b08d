#pragma once

#include "hsrl/core.hpp"

namespace hsrl {

enum class AveragingMode { none, block, moving };

struct AveragingOptions {
  AveragingMode mode = AveragingMode::none;
  int rows = 1;
  int cols = 1;

  void validate() const;
};

/// Savitzky-Golay filter settings for one axis. window == 1 disables the
/// filter entirely (identity passthrough).
struct SgOptions {
  int window = 1;
  int poly_order = 1;

  void validate() const;
};

enum class DerivativeScheme {
  /// First differences against the previous sample, with the first bin
  /// differenced against zero. Exactly inverts cumulative_integral.
  forward,
  /// Central differences in the interior, one-sided at the boundaries.
  central,
};

/// Knobs for the baseline averaging + algebraic inversion pipeline.
struct StandardOptions {
  AveragingOptions averaging;
  SgOptions sg_temporal;
  SgOptions sg_range;
  DerivativeScheme derivative = DerivativeScheme::forward;
};

/// Per-block arithmetic mean over non-overlapping rows x cols tiles; the
/// image shape must divide evenly.
Matrix block_average(const Matrix& image, int rows, int cols);

/// Same-size windowed mean with odd window sizes; edges replicate the
/// nearest sample.
Matrix moving_average(const Matrix& image, int rows, int cols);

/// Closed-form optical depth from the two channel means: pixels where the
/// log argument is not strictly positive come back invalid.
Matrix invert_od_algebraic(const Matrix& s_c, const Matrix& s_m, const Calibration& calib);

/// Closed-form parallel backscatter cross-section from the two channel
/// means; zero-denominator pixels come back invalid.
Matrix invert_nu_algebraic(const Matrix& s_c, const Matrix& s_m, const Calibration& calib);

/// Least-squares local polynomial smoothing of a 1-D signal. Boundary
/// windows are truncated (the fit simply uses fewer samples); invalid
/// samples are excluded from each local fit, and the output is invalid
/// wherever fewer than poly_order + 1 valid samples remain in the window.
std::vector<double> savitzky_golay(const std::vector<double>& signal, int window, int poly_order);

/// Apply savitzky_golay along every column (range axis) / row (time axis).
Matrix savitzky_golay_ranges(const Matrix& image, const SgOptions& opts);
Matrix savitzky_golay_profiles(const Matrix& image, const SgOptions& opts);

/// Columnwise derivative of an optical-depth image; any stencil touching an
/// invalid sample yields an invalid output pixel.
Matrix finite_difference(const Matrix& tau, double dr, DerivativeScheme scheme);

/// The baseline pipeline: average both channels, invert algebraically,
/// smooth the optical depth (temporal axis first, then range), and
/// differentiate to get extinction. Block averaging coarsens the grid, the
/// calibration, and rho alongside the counts.
InversionProducts algorithm1(const PhotonImage& y_c, const PhotonImage& y_m,
                             const Calibration& calib, const Matrix& rho,
                             const StandardOptions& opts);

/// Same pipeline on real-valued channel means (already-averaged counts or
/// noiseless expected energies), which need not be integers.
InversionProducts algorithm1_from_means(const Grid& grid, const Matrix& s_c, const Matrix& s_m,
                                        const Calibration& calib, const Matrix& rho,
                                        const StandardOptions& opts);

}  // namespace hsrl
