#include "hsrl/crossval.hpp"

#include <cmath>
#include <future>
#include <limits>
#include <sstream>

#include "hsrl/simulate.hpp"

namespace hsrl {

namespace {

constexpr double kThinProbability = 0.5;

// Stable per-channel sub-seed so the two channels get independent splits.
std::uint64_t channel_seed(std::uint64_t seed, std::size_t channel) {
  return seed + 0x9E3779B97F4A7C15ULL * (channel + 1);
}

}  // namespace

LambdaGrid::LambdaGrid(std::vector<double> v) : values(std::move(v)) {
  if (values.empty()) fail(ErrorCode::invalid_argument, "lambda grid must be nonempty");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] >= 0.0) || !std::isfinite(values[i]))
      fail(ErrorCode::invalid_argument, "lambda grid values must be finite and nonnegative");
    if (i > 0 && !(values[i] > values[i - 1]))
      fail(ErrorCode::invalid_argument, "lambda grid must be strictly increasing");
  }
}

LambdaGrid LambdaGrid::default_sweep() {
  std::vector<double> v(16);
  for (int i = 0; i < 16; ++i) v[i] = std::pow(10.0, -2.0 + 0.2 * i);
  return LambdaGrid(std::move(v));
}

SelectedLambda select_lambda(const TrainObjectiveFactory& factory, const ValidationLoss& validation,
                             const std::vector<PhotonImage>& counts, const LambdaGrid& grid,
                             const BoxConstraint& box, const SolverOptions& opts, std::uint64_t seed) {
  if (!factory || !validation)
    fail(ErrorCode::invalid_argument, "select_lambda needs an objective factory and a validation loss");
  if (counts.empty()) fail(ErrorCode::invalid_argument, "select_lambda needs at least one channel");
  for (std::size_t c = 1; c < counts.size(); ++c)
    if (!(counts[c].grid == counts[0].grid))
      fail(ErrorCode::invalid_argument, "all channels must share one grid");

  // One split for the whole sweep: every lambda sees the same halves.
  std::vector<PhotonImage> train, test;
  train.reserve(counts.size());
  test.reserve(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    auto [trn, tst] = poisson_thin(counts[c], kThinProbability, channel_seed(seed, c));
    train.push_back(std::move(trn));
    test.push_back(std::move(tst));
  }

  auto [objective, x0] = factory(train);

  struct Outcome {
    SolveResult solve;
    double test_loss = std::numeric_limits<double>::quiet_NaN();
    std::string failure;
    bool solved = false;
  };
  std::vector<Outcome> outcomes(grid.values.size());

  // Independent pure solves: run them concurrently, one task per lambda.
  std::vector<std::future<void>> tasks;
  tasks.reserve(grid.values.size());
  for (std::size_t i = 0; i < grid.values.size(); ++i) {
    tasks.push_back(std::async(std::launch::async, [&, i]() {
      try {
        outcomes[i].solve = spiral_minimize(objective, box, grid.values[i], x0, opts);
        outcomes[i].test_loss = validation(outcomes[i].solve.estimate, test);
        outcomes[i].solved = std::isfinite(outcomes[i].test_loss);
        if (!outcomes[i].solved) outcomes[i].failure = "validation loss is not finite";
      } catch (const std::exception& e) {
        outcomes[i].failure = e.what();
      }
    }));
  }
  for (auto& t : tasks) t.get();

  SelectedLambda result;
  result.table.reserve(grid.values.size());
  std::size_t best = grid.values.size();
  for (std::size_t i = 0; i < grid.values.size(); ++i) {
    const Outcome& o = outcomes[i];
    LambdaRow row;
    row.lambda = grid.values[i];
    row.solved = o.solved;
    if (o.solved) {
      row.train_objective = o.solve.objective;
      row.test_loss = o.test_loss;
      row.iterations = o.solve.iterations;
      row.converged = o.solve.converged;
      // strict comparison in increasing-lambda order: ties go to smaller lambda
      if (best == grid.values.size() || o.test_loss < outcomes[best].test_loss) best = i;
    } else {
      row.train_objective = std::numeric_limits<double>::quiet_NaN();
      row.test_loss = std::numeric_limits<double>::quiet_NaN();
    }
    result.table.push_back(row);
  }

  if (best == grid.values.size()) {
    std::ostringstream msg;
    msg << "every lambda failed:";
    for (std::size_t i = 0; i < grid.values.size(); ++i)
      msg << " [lambda=" << grid.values[i] << ": " << outcomes[i].failure << "]";
    fail(ErrorCode::numeric_failure, msg.str());
  }

  result.lambda_star = grid.values[best];
  result.estimate = std::move(outcomes[best].solve.estimate);
  result.trace_at_star = std::move(outcomes[best].solve.trace);
  return result;
}

}  // namespace hsrl
