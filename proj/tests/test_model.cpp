#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "dynclust/state.hpp"
#include "test_util.hpp"

using namespace dynclust;

namespace {
constexpr double kLog2Pi = 1.8378770664093453;

bool mentions(const ValidationReport& rep, const std::string& needle) {
  for (const auto& v : rep.violations)
    if (v.find(needle) != std::string::npos) return true;
  return false;
}
}  // namespace

TEST_CASE("validate_config accepts the default hyperparameters") {
  Rng rng = make_rng(11, 0);
  auto data = testutil::make_panel(64, 5, 2, rng);
  ModelConfig cfg;
  cfg.sg_a = 1.0;
  cfg.sg_b = 0.25;
  auto rep = validate_config(cfg, data);
  CHECK(rep.ok);
  CHECK(rep.violations.empty());
}

TEST_CASE("validate_config names the Stirling-gamma constraint") {
  Rng rng = make_rng(12, 0);
  auto data = testutil::make_panel(10, 4, 0, rng);
  ModelConfig cfg;
  cfg.sg_a = 1.0;
  cfg.sg_b = 2.0;  // a/b = 0.5 <= 1
  auto rep = validate_config(cfg, data);
  CHECK_FALSE(rep.ok);
  CHECK(mentions(rep, "Stirling-gamma"));
}

TEST_CASE("validate_config rejects H=1 and broken distance matrices") {
  Rng rng = make_rng(13, 0);
  auto data = testutil::make_panel(8, 3, 0, rng);
  ModelConfig cfg;
  cfg.H = 1;
  auto rep = validate_config(cfg, data);
  CHECK_FALSE(rep.ok);
  CHECK(mentions(rep, "H"));

  cfg.H = 25;
  data.dist(0, 1) += 1.0;  // break symmetry
  rep = validate_config(cfg, data);
  CHECK_FALSE(rep.ok);
  CHECK(mentions(rep, "symmetric"));

  data.dist(0, 1) -= 1.0;
  data.dist(2, 2) = 0.5;  // nonzero diagonal
  rep = validate_config(cfg, data);
  CHECK_FALSE(rep.ok);
  CHECK(mentions(rep, "diagonal"));
}

TEST_CASE("validate_config flags nonfinite observed responses") {
  Rng rng = make_rng(14, 0);
  auto data = testutil::make_panel(6, 3, 0, rng);
  data.y(1, 2) = std::numeric_limits<double>::quiet_NaN();
  ModelConfig cfg;
  auto rep = validate_config(cfg, data);
  CHECK_FALSE(rep.ok);
  CHECK(mentions(rep, "(1,2)"));

  data.observed(1, 2) = false;  // masked cells may be nonfinite
  rep = validate_config(cfg, data);
  CHECK(rep.ok);
}

TEST_CASE("init_state collapses all-equal responses into one cluster") {
  Rng rng = make_rng(21, 0);
  auto data = testutil::make_panel(12, 4, 0, rng);
  data.y.setConstant(7.5);
  ModelConfig cfg;
  Rng init_rng = make_rng(cfg.seed, 0);
  auto st = init_state(cfg, data, init_rng);
  std::set<int> labels;
  for (int i = 0; i < data.n(); ++i)
    for (int t = 0; t < data.T(); ++t) labels.insert(st.s(i, t));
  CHECK(labels.size() == 1);
}

TEST_CASE("init_state is deterministic given the seed") {
  Rng rng = make_rng(22, 0);
  auto data = testutil::make_panel(9, 5, 2, rng);
  ModelConfig cfg;
  cfg.seed = 99;
  Rng r1 = make_rng(cfg.seed, 0);
  Rng r2 = make_rng(cfg.seed, 0);
  auto a = init_state(cfg, data, r1);
  auto b = init_state(cfg, data, r2);
  CHECK(a.s == b.s);
  CHECK(a.theta == b.theta);
  CHECK(a.sigma_sq == b.sigma_sq);
  CHECK(a.eps == b.eps);
  CHECK(a.lambda == b.lambda);
  CHECK(a.alpha == b.alpha);
}

TEST_CASE("init_state derived weights lie on the simplex at every t") {
  Rng rng = make_rng(23, 0);
  auto data = testutil::make_panel(15, 6, 1, rng, 10.0, 5.0);
  ModelConfig cfg;
  Rng init_rng = make_rng(cfg.seed, 0);
  auto st = init_state(cfg, data, init_rng);
  for (int t = 0; t < data.T(); ++t) {
    double s = st.weights.col(t).sum();
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(st.weights.col(t).minCoeff() >= 0.0);
  }
}

TEST_CASE("log_likelihood single-cell and four-cell closed forms") {
  Rng rng = make_rng(31, 0);
  auto data = testutil::make_panel(1, 1, 0, rng);
  data.y(0, 0) = 3.0;
  ChainState st;
  st.s.setZero(1, 1);
  st.theta = VectorXd::Constant(1, 3.0);
  st.sigma_sq = VectorXd::Constant(1, 1.0);
  st.gamma = VectorXd::Zero(1);
  st.beta = VectorXd::Zero(0);
  CHECK(log_likelihood(st, data) == doctest::Approx(-0.5 * kLog2Pi).epsilon(1e-14));

  auto data2 = testutil::make_panel(2, 2, 0, rng);
  data2.y.setZero();
  ChainState st2;
  st2.s.setZero(2, 2);
  st2.theta = VectorXd::Zero(1);
  st2.sigma_sq = VectorXd::Constant(1, 1.0);
  st2.gamma = VectorXd::Zero(2);
  st2.beta = VectorXd::Zero(0);
  CHECK(log_likelihood(st2, data2) == doctest::Approx(4.0 * (-0.5 * kLog2Pi)).epsilon(1e-14));
}

TEST_CASE("log_likelihood matches a naive double-loop oracle") {
  Rng rng = make_rng(32, 0);
  auto data = testutil::make_panel(5, 4, 3, rng, 2.0, 4.0);
  data.observed(1, 1) = false;
  data.observed(4, 0) = false;
  int H = 3;
  ChainState st;
  st.s.resize(5, 4);
  std::uniform_int_distribution<int> pick(0, H - 1);
  std::normal_distribution<double> norm(0.0, 1.0);
  for (int i = 0; i < 5; ++i)
    for (int t = 0; t < 4; ++t) st.s(i, t) = pick(rng);
  st.theta.resize(H);
  st.sigma_sq.resize(H);
  for (int k = 0; k < H; ++k) {
    st.theta[k] = norm(rng);
    st.sigma_sq[k] = 0.5 + std::abs(norm(rng));
  }
  st.beta.resize(3);
  for (int j = 0; j < 3; ++j) st.beta[j] = norm(rng);
  st.gamma.resize(5);
  for (int i = 0; i < 5; ++i) st.gamma[i] = norm(rng);

  MatrixXd per_cell;
  double total = log_likelihood(st, data, &per_cell);

  double naive = 0.0;
  for (int i = 0; i < 5; ++i)
    for (int t = 0; t < 4; ++t) {
      if (!data.observed(i, t)) {
        CHECK(per_cell(i, t) == 0.0);
        continue;
      }
      int k = st.s(i, t);
      double mu = st.theta[k] + data.x[t].row(i).dot(st.beta) + st.gamma[i];
      double v = st.sigma_sq[k];
      double cell = -0.5 * std::log(2.0 * M_PI * v) -
                    0.5 * (data.y(i, t) - mu) * (data.y(i, t) - mu) / v;
      naive += cell;
      CHECK(per_cell(i, t) == doctest::Approx(cell).epsilon(1e-12));
    }
  CHECK(total == doctest::Approx(naive).epsilon(1e-12));
}

TEST_CASE("log_likelihood names the offending cell on nonfinite results") {
  Rng rng = make_rng(33, 0);
  auto data = testutil::make_panel(2, 2, 0, rng);
  ChainState st;
  st.s.setZero(2, 2);
  st.theta = VectorXd::Zero(1);
  st.sigma_sq = VectorXd::Constant(1, 0.0);  // log(0) -> -inf
  st.gamma = VectorXd::Zero(2);
  st.beta = VectorXd::Zero(0);
  CHECK_THROWS_WITH_AS(log_likelihood(st, data), doctest::Contains("(0,0)"), numerical_error);
}
