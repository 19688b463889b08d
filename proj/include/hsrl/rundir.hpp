#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hsrl/core.hpp"
#include "hsrl/pipelines.hpp"
#include "hsrl/simulate.hpp"

namespace hsrl {

/// Everything one synthetic acquisition writes to disk and reads back:
/// truth fields, calibration, expected energies, sampled counts.
struct SimulationRun {
  SceneRecipe recipe;
  double gain_scale = 1.0;
  std::uint64_t seed = 0;
  ScatterScene scene;
  Calibration calib;
  EnergyImage s_c;
  EnergyImage s_m;
  PhotonImage y_c;
  PhotonImage y_m;
};

/// Build a scene from its recipe and sample both channels once.
SimulationRun simulate_run(const SceneRecipe& recipe, double gain_scale, std::uint64_t seed);

/// Writes the 13 matrix files (nu, nu_plus, beta, mu, tau, rho, c_g, c_mc,
/// c_mm, s_c, s_m, y_c, y_m) plus manifest.txt. Backgrounds and the filter
/// leakage are spatially constant and recorded as manifest scalars.
void write_simulation_dir(const std::string& dir, const SimulationRun& run);

/// Reads back what write_simulation_dir wrote (counts, calibration, truth).
SimulationRun read_simulation_dir(const std::string& dir);

/// Writes one matrix file per engaged product field (<field>_hat.csv), the
/// run manifest (algorithm, notes, and any extra key/value pairs), and, when
/// details are given, lambda_table.csv with columns
/// stage,lambda,train_objective,test_loss,iterations,converged (one row per
/// stage and lambda) plus trace_<stage>.csv iteration logs when trace is set.
void write_products_dir(const std::string& dir, const InversionProducts& products,
                        const KeyValues& extra, const TvRunDetails* details, bool trace);

/// Products plus the algorithm label recovered from a directory. Accepts a
/// simulation directory too: truth fields then load as the "truth" algorithm,
/// so a truth directory can be scored against itself or against estimates.
struct LoadedProducts {
  std::string algorithm;
  InversionProducts products;
};
LoadedProducts read_products_dir(const std::string& dir);

/// Canonical score-field order: nu, nu_plus, beta, mu, tau.
const std::vector<std::string>& product_field_names();

/// Create the parent directories of `path` as needed and write `text` whole.
void write_text_file(const std::string& path, const std::string& text);

/// Pull one field by canonical name (null when disengaged).
const std::optional<Matrix>* product_field(const InversionProducts& p, const std::string& name);

}  // namespace hsrl
