#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "fairfl/models.hpp"
#include "oracles.hpp"

using namespace fairfl;

namespace {

std::vector<Sample> random_batch(std::mt19937_64& rng, std::size_t d, std::size_t n) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<Sample> b(n);
  for (auto& s : b) {
    s.features.resize(d);
    for (auto& x : s.features) x = z(rng);
    s.label = int(rng() % 2);
    s.group = rng() % 2 ? Group::a : Group::b;
  }
  return b;
}

}  // namespace

TEST_CASE("gradient matches central finite differences") {
  CHECK(oracle::worst_gradient_error(Architecture::linear(3), 1, 100, false) < 1e-4);
  CHECK(oracle::worst_gradient_error(Architecture::mlp(3, 4), 2, 100, false) < 1e-4);
  CHECK(oracle::worst_gradient_error(Architecture::linear(2), 3, 50, true) < 1e-4);
  CHECK(oracle::worst_gradient_error(Architecture::mlp(2, 3), 4, 50, true) < 1e-4);
}

TEST_CASE("parameter layout and validation") {
  CHECK(Architecture::linear(3).param_count() == 4);
  CHECK(Architecture::mlp(3, 5).param_count() == 26);
  CHECK_THROWS_AS(ModelParams(Architecture::linear(2), {1.0}), ValidationError);
  CHECK_THROWS_AS(ModelParams(Architecture::linear(1), {NAN, 0.0}), ValidationError);
  CHECK_THROWS_AS(Architecture::mlp(2, 0).validate(), ValidationError);
}

TEST_CASE("linear model predictions and tie rule") {
  ModelParams m(Architecture::linear(1), {2.0, -4.0});
  const std::vector<double> at{2.0}, below{1.0};
  CHECK(predict_proba(m, at) == 0.5);
  CHECK(predict_label(m, at) == 1);
  CHECK(predict_label(m, below) == 0);
  CHECK(predict_proba(m, std::vector<double>{1e6}) == 1.0);
  CHECK(std::isfinite(loss(m, std::vector<Sample>{{{1e6}, 0, Group::a}})));
}

TEST_CASE("initialization is seeded and bounded") {
  const auto a = init_params(Architecture::mlp(4, 3), 9);
  CHECK(a == init_params(Architecture::mlp(4, 3), 9));
  CHECK_FALSE(a == init_params(Architecture::mlp(4, 3), 10));
  for (std::size_t k = 0; k < 12; ++k) CHECK(std::fabs(a[k]) <= 0.5);
  for (std::size_t k = 12; k < 15; ++k) CHECK(a[k] == 0.0);
  CHECK(a[a.size() - 1] == 0.0);
}

TEST_CASE("sgd learns a separable problem deterministically") {
  std::vector<Sample> s;
  for (int i = 0; i < 200; ++i) s.push_back({{i < 100 ? -1.0 - i * 0.01 : 1.0 + i * 0.01}, i < 100 ? 0 : 1, Group::a});
  ClientDataset d(0, s);
  TrainConfig tc;
  tc.epochs = 30;
  tc.learning_rate = 0.5;
  tc.seed = 3;
  const auto m = sgd_train(ModelParams(Architecture::linear(1)), d, tc);
  CHECK(misclassification_rate(m, d) == 0.0);
  CHECK(m == sgd_train(ModelParams(Architecture::linear(1)), d, tc));
  tc.learning_rate = 0.0;
  CHECK(sgd_train(ModelParams(Architecture::linear(1)), d, tc) == ModelParams(Architecture::linear(1)));
}

TEST_CASE("divergence is reported") {
  std::vector<Sample> s{{{1e300}, 1, Group::a}, {{-1e300}, 0, Group::b}};
  ClientDataset d(0, s);
  TrainConfig tc;
  tc.learning_rate = 1e300;
  CHECK_THROWS_AS(sgd_train(ModelParams(Architecture::linear(1), {-1.0, 0.0}), d, tc), DivergenceError);
}

TEST_CASE("full-batch steps decrease the loss") {
  std::mt19937_64 rng(5);
  const auto batch = random_batch(rng, 2, 50);
  ClientDataset d(0, batch);
  const ModelParams m0(Architecture::linear(2));
  const auto m1 = gradient_steps(m0, d, 10, 0.1);
  CHECK(loss(m1, d) < loss(m0, d));
  CHECK(gradient_steps(m0, d, 0, 0.1) == m0);
}
