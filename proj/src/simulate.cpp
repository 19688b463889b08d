#include "hsrl/simulate.hpp"

#include <cmath>

namespace hsrl {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t mix64(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Counter-based uniform stream for one pixel: draws depend only on
/// (seed, pixel index, draw index), never on traversal order.
class PixelRng {
 public:
  PixelRng(std::uint64_t seed, std::uint64_t pixel) : key_(mix64(mix64(seed) ^ (pixel * kGolden))) {}

  double next_u01() {
    std::uint64_t bits = mix64(key_ ^ (++ctr_ * kGolden));
    // 53 mantissa bits, offset to the open interval (0, 1)
    return (static_cast<double>(bits >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

 private:
  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
};

/// Inversion by sequential search; adequate below rate 30 where the CDF
/// concentrates on few terms.
long poisson_small(double rate, PixelRng& rng) {
  double u = rng.next_u01();
  double p = std::exp(-rate);
  double cdf = p;
  long k = 0;
  while (u > cdf && k < 4000) {
    ++k;
    p *= rate / static_cast<double>(k);
    cdf += p;
  }
  return k;
}

/// Hormann's PTRS transformed-rejection sampler for rate >= 30.
long poisson_ptrs(double rate, PixelRng& rng) {
  const double b = 0.931 + 2.53 * std::sqrt(rate);
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double v_r = 0.9277 - 3.6224 / (b - 2.0);
  const double log_rate = std::log(rate);
  for (;;) {
    double u = rng.next_u01() - 0.5;
    double v = rng.next_u01();
    double us = 0.5 - std::abs(u);
    double kf = std::floor((2.0 * a / us + b) * u + rate + 0.43);
    if (us >= 0.07 && v <= v_r) return static_cast<long>(kf);
    if (kf < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
        kf * log_rate - rate - std::lgamma(kf + 1.0))
      return static_cast<long>(kf);
  }
}

/// Exact binomial inverse-CDF draw. The CDF accumulation starts 12 sigma left
/// of the mean; the clipped tail mass (< 1e-30) is far below the resolution
/// of the uniform draw.
long binomial_icdf(long y, double p, double u) {
  double mean = static_cast<double>(y) * p;
  double sd = std::sqrt(mean * (1.0 - p));
  long k = std::max(0L, static_cast<long>(std::floor(mean - 12.0 * sd - 5.0)));
  double log_pmf = std::lgamma(static_cast<double>(y) + 1.0) -
                   std::lgamma(static_cast<double>(k) + 1.0) -
                   std::lgamma(static_cast<double>(y - k) + 1.0) +
                   static_cast<double>(k) * std::log(p) +
                   static_cast<double>(y - k) * std::log1p(-p);
  double pmf = std::exp(log_pmf);
  double cdf = pmf;
  const double odds = p / (1.0 - p);
  while (u > cdf && k < y) {
    pmf *= static_cast<double>(y - k) / static_cast<double>(k + 1) * odds;
    ++k;
    cdf += pmf;
  }
  return k;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix64(mix64(seed) ^ mix64(stream + 1));
}

PhotonImage sample_poisson(const EnergyImage& rates, std::uint64_t seed) {
  Matrix counts(rates.values.rows(), rates.values.cols());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    PixelRng rng(seed, i);
    double rate = rates.values[i];
    counts[i] = static_cast<double>(rate < 30.0 ? poisson_small(rate, rng) : poisson_ptrs(rate, rng));
  }
  return PhotonImage(rates.grid, rates.channel, std::move(counts));
}

std::pair<PhotonImage, PhotonImage> poisson_thin(const PhotonImage& counts, double p,
                                                 std::uint64_t seed) {
  if (!(p > 0.0) || !(p < 1.0)) fail(ErrorCode::invalid_argument, "poisson_thin: p must be in (0,1)");
  Matrix train(counts.counts.rows(), counts.counts.cols());
  Matrix test(counts.counts.rows(), counts.counts.cols());
  for (std::size_t i = 0; i < train.size(); ++i) {
    long y = static_cast<long>(counts.counts[i]);
    long kept = 0;
    if (y > 0) {
      PixelRng rng(seed, i);
      if (y < 64) {
        for (long j = 0; j < y; ++j)
          if (rng.next_u01() < p) ++kept;
      } else {
        kept = binomial_icdf(y, p, rng.next_u01());
      }
    }
    train[i] = static_cast<double>(kept);
    test[i] = static_cast<double>(y - kept);
  }
  return {PhotonImage(counts.grid, counts.channel, std::move(train)),
          PhotonImage(counts.grid, counts.channel, std::move(test))};
}

PhotonImage accumulate(const PhotonImage& counts, int block_rows, int block_cols) {
  if (block_rows <= 0 || block_cols <= 0)
    fail(ErrorCode::invalid_argument, "accumulate: block sizes must be positive");
  const Grid& g = counts.grid;
  if (g.n_range % block_rows != 0 || g.n_profiles % block_cols != 0)
    fail(ErrorCode::invalid_argument, "accumulate: block sizes must divide grid dimensions");
  Grid out_grid{g.n_range / block_rows, g.n_profiles / block_cols, g.dr * block_rows,
                g.dt * block_cols};
  Matrix out(out_grid.n_range, out_grid.n_profiles, 0.0);
  for (int n = 0; n < g.n_range; ++n)
    for (int k = 0; k < g.n_profiles; ++k)
      out(n / block_rows, k / block_cols) += counts.counts(n, k);
  return PhotonImage(out_grid, counts.channel, std::move(out));
}

void SceneRecipe::validate() const {
  grid.validate();
  if (cloud_row_lo < 0 || cloud_row_hi >= grid.n_range || cloud_row_lo > cloud_row_hi ||
      cloud_col_lo < 0 || cloud_col_hi >= grid.n_profiles || cloud_col_lo > cloud_col_hi)
    fail(ErrorCode::invalid_argument, "SceneRecipe: cloud box must lie within the grid");
  if (!(cloud_mu >= 1.0) || !(clear_mu >= 1.0))
    fail(ErrorCode::invalid_argument, "SceneRecipe: lidar ratios must be >= 1");
  if (!(cloud_nu_peak >= 0.0) || !(clear_nu >= 0.0))
    fail(ErrorCode::invalid_argument, "SceneRecipe: backscatter levels must be nonnegative");
  if (smoothing < 0) fail(ErrorCode::invalid_argument, "SceneRecipe: smoothing must be >= 0");
  if (!(background_c >= 0.0) || !(background_m >= 0.0))
    fail(ErrorCode::invalid_argument, "SceneRecipe: backgrounds must be nonnegative");
  if (!(c_am >= 0.0) || !(c_am < 1.0))
    fail(ErrorCode::invalid_argument, "SceneRecipe: c_am must lie in [0, 1)");
}

SceneRecipe parse_scene_recipe(const KeyValues& kv) {
  const char* ctx = "scene recipe";
  SceneRecipe r;
  r.grid.n_range = require_int(kv, "rows", ctx);
  r.grid.n_profiles = require_int(kv, "cols", ctx);
  r.grid.dr = require_double(kv, "dr", ctx);
  r.grid.dt = require_double(kv, "dt", ctx);
  r.cloud_row_lo = require_int(kv, "cloud_row_lo", ctx);
  r.cloud_row_hi = require_int(kv, "cloud_row_hi", ctx);
  r.cloud_col_lo = require_int(kv, "cloud_col_lo", ctx);
  r.cloud_col_hi = require_int(kv, "cloud_col_hi", ctx);
  r.cloud_nu_peak = require_double(kv, "cloud_nu_peak", ctx);
  r.cloud_mu = require_double(kv, "cloud_mu", ctx);
  r.clear_mu = require_double(kv, "clear_mu", ctx);
  r.clear_nu = require_double(kv, "clear_nu", ctx);
  r.smoothing = require_int(kv, "smoothing", ctx);
  r.background_c = require_double(kv, "background_c", ctx);
  r.background_m = require_double(kv, "background_m", ctx);
  r.c_am = require_double(kv, "c_am", ctx);
  double seed = require_double(kv, "seed", ctx);
  if (seed < 0 || std::floor(seed) != seed)
    fail(ErrorCode::invalid_argument, "scene recipe: seed must be a nonnegative integer");
  r.seed = static_cast<std::uint64_t>(seed);
  r.validate();
  return r;
}

KeyValues scene_recipe_key_values(const SceneRecipe& r) {
  return {
      {"rows", std::to_string(r.grid.n_range)},
      {"cols", std::to_string(r.grid.n_profiles)},
      {"dr", format_double(r.grid.dr)},
      {"dt", format_double(r.grid.dt)},
      {"cloud_row_lo", std::to_string(r.cloud_row_lo)},
      {"cloud_row_hi", std::to_string(r.cloud_row_hi)},
      {"cloud_col_lo", std::to_string(r.cloud_col_lo)},
      {"cloud_col_hi", std::to_string(r.cloud_col_hi)},
      {"cloud_nu_peak", format_double(r.cloud_nu_peak)},
      {"cloud_mu", format_double(r.cloud_mu)},
      {"clear_mu", format_double(r.clear_mu)},
      {"clear_nu", format_double(r.clear_nu)},
      {"smoothing", std::to_string(r.smoothing)},
      {"background_c", format_double(r.background_c)},
      {"background_m", format_double(r.background_m)},
      {"c_am", format_double(r.c_am)},
      {"seed", std::to_string(r.seed)},
  };
}

namespace {

// Raised-cosine taper weight for a bin `i` against an inclusive range
// [lo, hi]: 1 inside, easing to 0 over `s` bins outside the range.
double taper_weight(int i, int lo, int hi, int s) {
  int d = 0;
  if (i < lo) d = lo - i;
  else if (i > hi) d = i - hi;
  else return 1.0;
  if (d > s) return 0.0;
  double c = std::cos(0.5 * M_PI * static_cast<double>(d) / static_cast<double>(s + 1));
  return c * c;
}

// Synthetic instrument constants. The recipe has no amplitude key, so the
// scale is fixed here: chosen to give photon-starved molecular counts (tens
// per native bin) against the paper-scale backgrounds.
constexpr double kNearRangeGain = 5e7;      // counts per (1/m) at the reference range
constexpr double kRangeOffset = 500.0;      // meters to the first bin
constexpr double kMolecularScaleHeight = 8000.0;  // meters
constexpr double kCrossSectionCombined = 2e-6;    // 1/m at the reference range
constexpr double kCrossSectionMolecular = 1e-6;   // behind the iodine filter

}  // namespace

std::pair<ScatterScene, Calibration> make_cirrus_scene(const SceneRecipe& r, double gain_scale) {
  r.validate();
  if (!(gain_scale > 0.0)) fail(ErrorCode::invalid_argument, "make_cirrus_scene: gain_scale must be > 0");
  const int N = r.grid.n_range, K = r.grid.n_profiles;
  Matrix nu(N, K), mu(N, K), beta(N, K);
  Matrix rho(N, K, 0.0);
  Matrix c_g(N, K), c_mc(N, K), c_mm(N, K);
  for (int n = 0; n < N; ++n) {
    double range = kRangeOffset + n * r.grid.dr;
    double falloff = (kRangeOffset / range) * (kRangeOffset / range);
    double density = std::exp(-range / kMolecularScaleHeight);
    for (int k = 0; k < K; ++k) {
      double w = taper_weight(n, r.cloud_row_lo, r.cloud_row_hi, r.smoothing) *
                 taper_weight(k, r.cloud_col_lo, r.cloud_col_hi, r.smoothing);
      nu(n, k) = r.clear_nu + (r.cloud_nu_peak - r.clear_nu) * w;
      mu(n, k) = r.clear_mu + (r.cloud_mu - r.clear_mu) * w;
      beta(n, k) = mu(n, k) * nu(n, k);  // rho = 0, so nu_plus = nu
      c_g(n, k) = gain_scale * kNearRangeGain * falloff;
      c_mc(n, k) = kCrossSectionCombined * density;
      c_mm(n, k) = kCrossSectionMolecular * density;
    }
  }
  ScatterScene scene(r.grid, std::move(nu), std::move(beta), std::move(rho));
  Calibration calib(r.grid, std::move(c_g), std::move(c_mc), std::move(c_mm),
                    Matrix::constant(N, K, r.background_c), Matrix::constant(N, K, r.background_m),
                    r.c_am);
  return {std::move(scene), std::move(calib)};
}

}  // namespace hsrl
