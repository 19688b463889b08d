#include "hsrl/rundir.hpp"

#include <cstdio>
#include <filesystem>
#include <system_error>

#include "hsrl/forward.hpp"

namespace hsrl {

namespace {

namespace fs = std::filesystem;

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io_failure, "cannot create directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

Matrix read_field(const std::string& dir, const std::string& name, const Grid& grid) {
  Image img = read_matrix_csv(join(dir, name));
  if (!(img.grid == grid))
    fail(ErrorCode::io_failure, join(dir, name) + ": grid disagrees with the run manifest");
  return std::move(img.values);
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace

SimulationRun simulate_run(const SceneRecipe& recipe, double gain_scale, std::uint64_t seed) {
  auto [scene, calib] = make_cirrus_scene(recipe, gain_scale);
  EnergyImage s_c = forward_combined(scene, calib);
  EnergyImage s_m = forward_molecular(scene, calib);
  PhotonImage y_c = sample_poisson(s_c, derive_seed(seed, 0));
  PhotonImage y_m = sample_poisson(s_m, derive_seed(seed, 1));
  return SimulationRun{recipe,         gain_scale,      seed,
                       std::move(scene), std::move(calib), std::move(s_c),
                       std::move(s_m),   std::move(y_c),   std::move(y_m)};
}

void write_simulation_dir(const std::string& dir, const SimulationRun& run) {
  ensure_dir(dir);
  const Grid& g = run.scene.grid;
  write_matrix_csv(join(dir, "nu.csv"), g, run.scene.nu);
  write_matrix_csv(join(dir, "nu_plus.csv"), g, run.scene.nu_plus());
  write_matrix_csv(join(dir, "beta.csv"), g, run.scene.beta);
  write_matrix_csv(join(dir, "mu.csv"), g, run.scene.mu());
  write_matrix_csv(join(dir, "tau.csv"), g, run.scene.optical_depth());
  write_matrix_csv(join(dir, "rho.csv"), g, run.scene.rho);
  write_matrix_csv(join(dir, "c_g.csv"), g, run.calib.c_g);
  write_matrix_csv(join(dir, "c_mc.csv"), g, run.calib.c_mc);
  write_matrix_csv(join(dir, "c_mm.csv"), g, run.calib.c_mm);
  write_matrix_csv(join(dir, "s_c.csv"), g, run.s_c.values);
  write_matrix_csv(join(dir, "s_m.csv"), g, run.s_m.values);
  write_matrix_csv(join(dir, "y_c.csv"), g, run.y_c.counts);
  write_matrix_csv(join(dir, "y_m.csv"), g, run.y_m.counts);

  KeyValues manifest;
  manifest.emplace_back("kind", "simulation");
  for (auto& [k, v] : scene_recipe_key_values(run.recipe)) manifest.emplace_back(k, v);
  manifest.emplace_back("gain_scale", format_double(run.gain_scale));
  manifest.emplace_back("sample_seed", std::to_string(run.seed));
  // The backgrounds and the molecular-filter leakage are spatially constant;
  // the scalars here are the full record (no b_c/b_m matrix files).
  manifest.emplace_back("b_c", format_double(run.recipe.background_c));
  manifest.emplace_back("b_m", format_double(run.recipe.background_m));
  write_key_values(join(dir, "manifest.txt"), manifest);
}

SimulationRun read_simulation_dir(const std::string& dir) {
  KeyValues manifest = read_key_values(join(dir, "manifest.txt"));
  const std::string* kind = find_key(manifest, "kind");
  if (!kind || *kind != "simulation")
    fail(ErrorCode::io_failure, dir + ": manifest.txt does not describe a simulation run");
  SceneRecipe recipe = parse_scene_recipe(manifest);
  double gain_scale = require_double(manifest, "gain_scale", "simulation manifest");
  double sample_seed = require_double(manifest, "sample_seed", "simulation manifest");

  const Grid& g = recipe.grid;
  Matrix nu = read_field(dir, "nu.csv", g);
  Matrix beta = read_field(dir, "beta.csv", g);
  Matrix rho = read_field(dir, "rho.csv", g);
  ScatterScene scene(g, std::move(nu), std::move(beta), std::move(rho));

  Matrix c_g = read_field(dir, "c_g.csv", g);
  Matrix c_mc = read_field(dir, "c_mc.csv", g);
  Matrix c_mm = read_field(dir, "c_mm.csv", g);
  double b_c = require_double(manifest, "b_c", "simulation manifest");
  double b_m = require_double(manifest, "b_m", "simulation manifest");
  Calibration calib(g, std::move(c_g), std::move(c_mc), std::move(c_mm),
                    Matrix::constant(g.n_range, g.n_profiles, b_c),
                    Matrix::constant(g.n_range, g.n_profiles, b_m), recipe.c_am);

  EnergyImage s_c(g, Channel::combined, read_field(dir, "s_c.csv", g));
  EnergyImage s_m(g, Channel::molecular, read_field(dir, "s_m.csv", g));
  PhotonImage y_c(g, Channel::combined, read_field(dir, "y_c.csv", g));
  PhotonImage y_m(g, Channel::molecular, read_field(dir, "y_m.csv", g));

  return SimulationRun{recipe,
                       gain_scale,
                       static_cast<std::uint64_t>(sample_seed),
                       std::move(scene),
                       std::move(calib),
                       std::move(s_c),
                       std::move(s_m),
                       std::move(y_c),
                       std::move(y_m)};
}

const std::vector<std::string>& product_field_names() {
  static const std::vector<std::string> names = {"nu", "nu_plus", "beta", "mu", "tau"};
  return names;
}

const std::optional<Matrix>* product_field(const InversionProducts& p, const std::string& name) {
  if (name == "nu") return &p.nu_hat;
  if (name == "nu_plus") return &p.nu_plus_hat;
  if (name == "beta") return &p.beta_hat;
  if (name == "mu") return &p.mu_hat;
  if (name == "tau") return &p.tau_hat;
  return nullptr;
}

namespace {

std::optional<Matrix>* product_field_mutable(InversionProducts& p, const std::string& name) {
  return const_cast<std::optional<Matrix>*>(product_field(p, name));
}

}  // namespace

void write_text_file(const std::string& path, const std::string& text) {
  fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) fail(ErrorCode::io_failure, "cannot open " + path + " for writing");
  std::size_t n = std::fwrite(text.data(), 1, text.size(), f);
  if (std::fclose(f) != 0 || n != text.size())
    fail(ErrorCode::io_failure, "cannot finish writing " + path);
}

namespace {

void write_lambda_table(const std::string& path, const std::vector<StageSelection>& stages) {
  std::string csv = "stage,lambda,train_objective,test_loss,iterations,converged\n";
  for (const StageSelection& s : stages)
    for (const LambdaRow& row : s.selection.table) {
      csv += s.stage;
      csv += ',';
      csv += format_double(row.lambda);
      csv += ',';
      csv += row.solved ? format_double(row.train_objective) : "nan";
      csv += ',';
      csv += row.solved ? format_double(row.test_loss) : "nan";
      csv += ',';
      csv += std::to_string(row.iterations);
      csv += ',';
      csv += bool_text(row.converged);
      csv += '\n';
    }
  write_text_file(path, csv);
}

void write_trace(const std::string& path, const std::vector<SolveTraceRow>& trace) {
  std::string csv = "iteration,objective,step,accepted\n";
  for (const SolveTraceRow& row : trace) {
    csv += std::to_string(row.iteration);
    csv += ',';
    csv += format_double(row.objective);
    csv += ',';
    csv += format_double(row.step);
    csv += ',';
    csv += bool_text(row.accepted);
    csv += '\n';
  }
  write_text_file(path, csv);
}

}  // namespace

void write_products_dir(const std::string& dir, const InversionProducts& products,
                        const KeyValues& extra, const TvRunDetails* details, bool trace) {
  ensure_dir(dir);
  for (const std::string& name : product_field_names()) {
    const std::optional<Matrix>* field = product_field(products, name);
    if (field && field->has_value())
      write_matrix_csv(join(dir, name + "_hat.csv"), products.grid, **field);
  }

  KeyValues manifest;
  manifest.emplace_back("kind", "products");
  manifest.emplace_back("algorithm", products.algorithm);
  manifest.emplace_back("rows", std::to_string(products.grid.n_range));
  manifest.emplace_back("cols", std::to_string(products.grid.n_profiles));
  manifest.emplace_back("dr", format_double(products.grid.dr));
  manifest.emplace_back("dt", format_double(products.grid.dt));
  for (auto& [k, v] : extra) manifest.emplace_back(k, v);
  for (auto& [k, v] : products.notes) manifest.emplace_back(k, v);
  write_key_values(join(dir, "manifest.txt"), manifest);

  if (details) {
    write_lambda_table(join(dir, "lambda_table.csv"), details->stages);
    if (trace)
      for (const StageSelection& s : details->stages)
        write_trace(join(dir, "trace_" + s.stage + ".csv"), s.selection.trace_at_star);
  }
}

LoadedProducts read_products_dir(const std::string& dir) {
  KeyValues manifest = read_key_values(join(dir, "manifest.txt"));
  std::string kind = require_key(manifest, "kind", "run manifest");
  LoadedProducts out;
  if (kind == "simulation") {
    // Truth directories double as an "estimate": the scene fields load under
    // their plain names so truth-vs-truth scoring is expressible.
    SimulationRun run = read_simulation_dir(dir);
    out.algorithm = "truth";
    out.products.grid = run.scene.grid;
    out.products.algorithm = "truth";
    out.products.nu_hat = run.scene.nu;
    out.products.nu_plus_hat = run.scene.nu_plus();
    out.products.beta_hat = run.scene.beta;
    out.products.mu_hat = run.scene.mu();
    out.products.tau_hat = run.scene.optical_depth();
    return out;
  }
  if (kind != "products")
    fail(ErrorCode::io_failure, dir + ": manifest.txt does not describe an inversion run");

  Grid grid;
  grid.n_range = require_int(manifest, "rows", "run manifest");
  grid.n_profiles = require_int(manifest, "cols", "run manifest");
  grid.dr = require_double(manifest, "dr", "run manifest");
  grid.dt = require_double(manifest, "dt", "run manifest");

  out.algorithm = require_key(manifest, "algorithm", "run manifest");
  out.products.grid = grid;
  out.products.algorithm = out.algorithm;
  for (const std::string& name : product_field_names()) {
    std::string path = join(dir, name + "_hat.csv");
    if (!fs::exists(path)) continue;
    *product_field_mutable(out.products, name) = read_field(dir, name + "_hat.csv", grid);
  }
  for (auto& [k, v] : manifest)
    if (k != "kind" && k != "algorithm" && k != "rows" && k != "cols" && k != "dr" && k != "dt")
      out.products.notes.emplace_back(k, v);
  return out;
}

}  // namespace hsrl
