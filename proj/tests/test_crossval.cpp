#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "hsrl/crossval.hpp"
#include "hsrl/simulate.hpp"
#include "hsrl/tvsolver.hpp"
#include "test_support.hpp"

using namespace hsrl;
using namespace hsrl_test;

namespace {

// Train-half denoising objective: the thinned counts have half the full
// expectation, so the background enters halved as well.
Objective half_rate_objective(PhotonImage train, Matrix background_half) {
  return Objective{
      [train, background_half](const Matrix& x) { return poisson_loss_omega(x, train, background_half); },
      [train, background_half](const Matrix& x) {
        return poisson_loss_omega_grad(x, train, background_half);
      }};
}

}  // namespace

TEST_CASE("lambda grid validates its values") {
  CHECK_THROWS_AS(LambdaGrid({}), Error);
  CHECK_THROWS_AS(LambdaGrid({0.5, 0.5}), Error);
  CHECK_THROWS_AS(LambdaGrid({0.5, 0.1}), Error);
  CHECK_THROWS_AS(LambdaGrid({-0.1, 0.5}), Error);
  CHECK_THROWS_AS(LambdaGrid({0.0, std::numeric_limits<double>::infinity()}), Error);
  CHECK_NOTHROW(LambdaGrid({0.0}));
  CHECK_NOTHROW(LambdaGrid({0.0, 1e-9, 1.0}));

  LambdaGrid sweep = LambdaGrid::default_sweep();
  REQUIRE(sweep.values.size() == 16);
  CHECK(sweep.values.front() == doctest::Approx(1e-2).epsilon(1e-12));
  CHECK(sweep.values.back() == doctest::Approx(10.0).epsilon(1e-12));
  for (std::size_t i = 1; i < sweep.values.size(); ++i)
    CHECK(sweep.values[i] / sweep.values[i - 1] == doctest::Approx(std::pow(10.0, 0.2)).epsilon(1e-12));
}

TEST_CASE("singleton grid returns its lambda and the train-half solve") {
  Grid grid{8, 8, 7.5, 2.5};
  PhotonImage y = sample_poisson(EnergyImage(grid, Channel::combined, Matrix::constant(8, 8, 60.0)), 91);
  Matrix b_half = Matrix::constant(8, 8, 2.0);

  std::vector<PhotonImage> captured_train, captured_test;
  TrainObjectiveFactory factory = [&](const std::vector<PhotonImage>& train) {
    captured_train = train;
    return std::make_pair(half_rate_objective(train[0], b_half), Matrix::constant(8, 8, 1.0));
  };
  ValidationLoss validation = [&](const Matrix& est, const std::vector<PhotonImage>& test) {
    captured_test = test;
    return poisson_loss_omega(est, test[0], b_half);
  };

  BoxConstraint box = BoxConstraint::uniform(8, 8, 0.0, std::numeric_limits<double>::infinity());
  SolverOptions opts;
  SelectedLambda sel = select_lambda(factory, validation, {y}, LambdaGrid({0.3}), box, opts, 42);

  CHECK(sel.lambda_star == 0.3);
  REQUIRE(sel.table.size() == 1);
  CHECK(sel.table[0].solved);
  CHECK(sel.table[0].lambda == 0.3);

  // the split is complementary
  REQUIRE(captured_train.size() == 1);
  REQUIRE(captured_test.size() == 1);
  for (std::size_t i = 0; i < y.counts.size(); ++i)
    CHECK(captured_train[0].counts[i] + captured_test[0].counts[i] == y.counts[i]);

  // and the estimate is exactly the solve of the train objective at lambda
  SolveResult direct = spiral_minimize(half_rate_objective(captured_train[0], b_half), box, 0.3,
                                       Matrix::constant(8, 8, 1.0), opts);
  CHECK(max_abs_diff(sel.estimate, direct.estimate) == 0.0);
  CHECK(sel.table[0].train_objective == direct.objective);
  CHECK(sel.table[0].iterations == direct.iterations);
}

TEST_CASE("selected lambda attains the minimum test loss of the table") {
  Grid grid{10, 10, 7.5, 2.5};
  Matrix truth(10, 10, 5.0);
  for (int n = 3; n < 7; ++n)
    for (int k = 3; k < 7; ++k) truth(n, k) = 30.0;
  Matrix b = Matrix::constant(10, 10, 3.0);
  Matrix rates(10, 10);
  for (std::size_t i = 0; i < rates.size(); ++i) rates[i] = truth[i] + b[i];
  PhotonImage y = sample_poisson(EnergyImage(grid, Channel::combined, rates), 1234);
  Matrix b_half = Matrix::constant(10, 10, 1.5);

  TrainObjectiveFactory factory = [&](const std::vector<PhotonImage>& train) {
    return std::make_pair(half_rate_objective(train[0], b_half), Matrix::constant(10, 10, 1.0));
  };
  ValidationLoss validation = [&](const Matrix& est, const std::vector<PhotonImage>& test) {
    return poisson_loss_omega(est, test[0], b_half);
  };

  BoxConstraint box = BoxConstraint::uniform(10, 10, 0.0, std::numeric_limits<double>::infinity());
  SolverOptions opts;
  SelectedLambda sel =
      select_lambda(factory, validation, {y}, LambdaGrid({0.0, 50.0}), box, opts, 7);

  REQUIRE(sel.table.size() == 2);
  CHECK(sel.table[0].solved);
  CHECK(sel.table[1].solved);
  double star_loss = std::numeric_limits<double>::infinity();
  for (const LambdaRow& row : sel.table)
    if (row.lambda == sel.lambda_star) star_loss = row.test_loss;
  for (const LambdaRow& row : sel.table) CHECK(star_loss <= row.test_loss);
}

TEST_CASE("selection is deterministic in the seed") {
  Grid grid{8, 6, 7.5, 2.5};
  PhotonImage y = sample_poisson(EnergyImage(grid, Channel::combined, Matrix::constant(8, 6, 45.0)), 5);
  Matrix b_half = Matrix::constant(8, 6, 2.5);
  TrainObjectiveFactory factory = [&](const std::vector<PhotonImage>& train) {
    return std::make_pair(half_rate_objective(train[0], b_half), Matrix::constant(8, 6, 1.0));
  };
  ValidationLoss validation = [&](const Matrix& est, const std::vector<PhotonImage>& test) {
    return poisson_loss_omega(est, test[0], b_half);
  };
  BoxConstraint box = BoxConstraint::uniform(8, 6, 0.0, std::numeric_limits<double>::infinity());
  SolverOptions opts;
  LambdaGrid sweep({0.01, 0.1, 1.0, 10.0});

  SelectedLambda a = select_lambda(factory, validation, {y}, sweep, box, opts, 99);
  SelectedLambda c = select_lambda(factory, validation, {y}, sweep, box, opts, 99);
  CHECK(a.lambda_star == c.lambda_star);
  CHECK(max_abs_diff(a.estimate, c.estimate) == 0.0);
  REQUIRE(a.table.size() == c.table.size());
  for (std::size_t i = 0; i < a.table.size(); ++i) {
    CHECK(a.table[i].test_loss == c.table[i].test_loss);
    CHECK(a.table[i].train_objective == c.table[i].train_objective);
    CHECK(a.table[i].iterations == c.table[i].iterations);
  }

  SelectedLambda d = select_lambda(factory, validation, {y}, sweep, box, opts, 100);
  bool any_difference = d.lambda_star != a.lambda_star;
  for (std::size_t i = 0; i < a.table.size() && !any_difference; ++i)
    any_difference = d.table[i].test_loss != a.table[i].test_loss;
  CHECK(any_difference);  // a different split must actually change something
}

TEST_CASE("exact test-loss ties resolve toward the smaller lambda") {
  // a flat objective makes every lambda return x0, so all test losses tie
  TrainObjectiveFactory factory = [&](const std::vector<PhotonImage>&) {
    Objective obj{[](const Matrix&) { return 7.0; },
                  [](const Matrix& x) { return Matrix(x.rows(), x.cols(), 0.0); }};
    return std::make_pair(obj, Matrix::constant(4, 4, 5.0));
  };
  ValidationLoss validation = [&](const Matrix&, const std::vector<PhotonImage>&) { return 3.14; };

  Grid grid{4, 4, 7.5, 2.5};
  PhotonImage y(grid, Channel::combined, Matrix::constant(4, 4, 10.0));
  BoxConstraint box = BoxConstraint::uniform(4, 4, 0.0, 10.0);
  SolverOptions opts;
  SelectedLambda sel =
      select_lambda(factory, validation, {y}, LambdaGrid({0.1, 1.0, 10.0}), box, opts, 3);
  CHECK(sel.lambda_star == 0.1);
  CHECK(max_abs_diff(sel.estimate, Matrix::constant(4, 4, 5.0)) == 0.0);
}

TEST_CASE("an all-failure sweep raises an error listing every lambda") {
  TrainObjectiveFactory factory = [&](const std::vector<PhotonImage>&) {
    Objective obj{[](const Matrix&) { return std::numeric_limits<double>::quiet_NaN(); },
                  [](const Matrix& x) { return Matrix(x.rows(), x.cols(), 0.0); }};
    return std::make_pair(obj, Matrix::constant(4, 4, 1.0));
  };
  ValidationLoss validation = [&](const Matrix&, const std::vector<PhotonImage>&) { return 0.0; };

  Grid grid{4, 4, 7.5, 2.5};
  PhotonImage y(grid, Channel::combined, Matrix::constant(4, 4, 10.0));
  BoxConstraint box = BoxConstraint::uniform(4, 4, 0.0, 10.0);
  SolverOptions opts;
  try {
    select_lambda(factory, validation, {y}, LambdaGrid({0.25, 2.5}), box, opts, 3);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::numeric_failure);
    std::string what = e.what();
    CHECK(what.find("lambda=0.25") != std::string::npos);
    CHECK(what.find("lambda=2.5") != std::string::npos);
  }
}
