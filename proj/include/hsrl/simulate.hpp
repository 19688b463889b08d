#pragma once

#include <cstdint>
#include <utility>

#include "hsrl/core.hpp"

namespace hsrl {

/// Scene description for the synthetic cirrus benchmark: one smooth-edged
/// cloud of elevated backscatter and lidar ratio cloud_mu over clear air at
/// clear_mu, constant channel backgrounds, zero depolarization.
struct SceneRecipe {
  Grid grid{64, 32, 7.5, 2.5};
  int cloud_row_lo = 36;   // inclusive bin ranges
  int cloud_row_hi = 51;
  int cloud_col_lo = 6;
  int cloud_col_hi = 25;
  double cloud_nu_peak = 1e-3;  // 1/m
  double cloud_mu = 25.0;
  double clear_mu = 40.0;
  double clear_nu = 1e-6;  // 1/m
  int smoothing = 3;       // raised-cosine edge taper width in bins
  double background_c = 119.29;  // counts/bin
  double background_m = 21.46;
  double c_am = 5e-4;
  std::uint64_t seed = 12345;

  void validate() const;
};

SceneRecipe parse_scene_recipe(const KeyValues& kv);
KeyValues scene_recipe_key_values(const SceneRecipe& r);

/// Build the scene and its calibration. gain_scale multiplies the synthetic
/// gain profile; experiment two uses it to emulate accumulated oversampling
/// (the recipe then carries matching accumulated backgrounds).
std::pair<ScatterScene, Calibration> make_cirrus_scene(const SceneRecipe& recipe,
                                                       double gain_scale = 1.0);

/// Decorrelated child seed for sub-task `stream` of a run seeded by `seed`.
/// Nearby (seed, stream) pairs land far apart, so stages and Monte-Carlo
/// repetitions can derive their own streams from one user-facing seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Draw one Poisson sample per pixel. Deterministic in (rates, seed) and in
/// particular independent of pixel traversal order: every pixel consumes its
/// own counter-based stream.
PhotonImage sample_poisson(const EnergyImage& rates, std::uint64_t seed);

/// Split counts into train ~ Binomial(counts, p) and test = counts - train,
/// independently per pixel. Exactly complementary by construction.
std::pair<PhotonImage, PhotonImage> poisson_thin(const PhotonImage& counts, double p,
                                                 std::uint64_t seed);

/// Non-overlapping block sums; the output grid has bin widths dr*block_rows,
/// dt*block_cols. Total counts are preserved.
PhotonImage accumulate(const PhotonImage& counts, int block_rows, int block_cols);

}  // namespace hsrl
