#include <doctest.h>

#include <cmath>
#include <random>

#include "check_error.hpp"
#include "cwb/propensity.hpp"
#include "oracles.hpp"

using namespace cwb;
using oracle::make_dataset;
using oracle::numeric_column;

namespace {

// Reference fit computed with statsmodels Logit on the same 40 rows.
const std::vector<double> kX1{0.001,  0.299,  -0.274, -0.891, -0.455, -0.992, 0.06,   1.34,   -0.492, -0.62,
                              0.49,   0.357,  0.105,  -0.93,  -0.029, 0.695,  -1.344, -0.458, -1.901, -1.29,
                              -1.842, -0.235, -1.267, 0.271,  0.157,  -0.187, -2.517, -0.539, -0.049, 0.113,
                              -1.53,  -0.478, -0.979, -0.809, 1.061,  -0.808, -0.033, 0.884,  -0.584, -0.112};
const std::vector<double> kX2{2.331,  2.191, -1.675, 2.228, 6.076,  -2.641, 4.578, 2.358,  0.076, 8.001,
                              4.287,  -1.598, 2.224, 3.73,  1.434,  4.049,  1.8,   4.002,  6.316, -0.027,
                              2.609,  0.61,  2.382,  -1.562, 0.262, 1.411,  4.696, 5.436,  -1.971, -0.384,
                              3.941,  -3.977, 0.61,  1.708, 5.771,  4.068,  1.018, 0.894,  1.249, 6.571};
const std::vector<double> kT{0, 0, 1, 0, 0, 0, 0, 1, 1, 1, 0, 1, 0, 0, 0, 1, 0, 1, 0, 0,
                             0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1, 0, 1, 0, 0, 1, 1, 0, 1};

Dataset logistic_dgp(std::size_t n, std::uint64_t seed, std::vector<double> beta) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> norm;
  std::uniform_real_distribution<double> u;
  const std::size_t k = beta.size() - 1;
  std::vector<std::vector<double>> xs(k, std::vector<double>(n));
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) {
    double eta = beta[0];
    for (std::size_t j = 0; j < k; ++j) {
      xs[j][i] = norm(rng);
      eta += beta[j + 1] * xs[j][i];
    }
    t[i] = u(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
  }
  std::vector<Column> cols;
  for (std::size_t j = 0; j < k; ++j) cols.push_back(numeric_column("x" + std::to_string(j + 1), ColumnKind::Continuous, xs[j]));
  cols.push_back(numeric_column("t", ColumnKind::Binary, t));
  return make_dataset(std::move(cols));
}

}  // namespace

TEST_CASE("fit matches the statsmodels reference") {
  const Dataset ds = make_dataset({numeric_column("x1", ColumnKind::Continuous, kX1),
                                   numeric_column("x2", ColumnKind::Continuous, kX2),
                                   numeric_column("t", ColumnKind::Binary, kT)});
  const std::vector<std::string> cov{"x1", "x2"};
  const PropensityModel m = fit_propensity(ds, cov, "t");
  CHECK(m.converged);
  CHECK(m.intercept == doctest::Approx(0.14650681).epsilon(1e-5));
  CHECK(m.coefficients[0] == doctest::Approx(1.14924655).epsilon(1e-5));
  CHECK(m.coefficients[1] == doctest::Approx(-0.16860718).epsilon(1e-5));
  const auto p = predict(m, ds);
  CHECK(p[0] == doctest::Approx(0.43896409).epsilon(1e-5));
  CHECK(p[1] == doctest::Approx(0.53014171).epsilon(1e-5));
  CHECK(p[2] == doctest::Approx(0.52847672).epsilon(1e-5));
}

TEST_CASE("analytic gradient matches finite differences") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> norm;
  std::bernoulli_distribution coin(0.4);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Index n = 30, p = 4;
    Eigen::MatrixXd x(n, p);
    std::vector<double> t(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      x(i, 0) = 1.0;
      for (Eigen::Index j = 1; j < p; ++j) x(i, j) = norm(rng);
      t[static_cast<std::size_t>(i)] = coin(rng) ? 1.0 : 0.0;
    }
    Eigen::VectorXd beta(p);
    for (Eigen::Index j = 0; j < p; ++j) beta(j) = 0.5 * norm(rng);
    const double lambda = 0.3;
    const Eigen::VectorXd g = penalized_gradient(x, t, beta, lambda);
    const double h = 1e-5;
    for (Eigen::Index j = 0; j < p; ++j) {
      Eigen::VectorXd up = beta, dn = beta;
      up(j) += h;
      dn(j) -= h;
      const double fd = (penalized_loglik(x, t, up, lambda) - penalized_loglik(x, t, dn, lambda)) / (2 * h);
      CHECK(std::abs(fd - g(j)) / std::max(1.0, std::abs(g(j))) < 1e-6);
    }
  }
}

TEST_CASE("IRLS objective never decreases") {
  const Dataset ds = logistic_dgp(500, 3, {0.2, 1.0, -2.0});
  Eigen::MatrixXd x(500, 3);
  for (Eigen::Index i = 0; i < 500; ++i) {
    x(i, 0) = 1;
    x(i, 1) = ds.numeric("x1")[static_cast<std::size_t>(i)];
    x(i, 2) = ds.numeric("x2")[static_cast<std::size_t>(i)];
  }
  const auto r = irls_logistic(x, ds.numeric("t"), 1e-6, 1e-10, 100);
  CHECK(r.converged);
  for (std::size_t i = 1; i < r.objective_trace.size(); ++i) CHECK(r.objective_trace[i] >= r.objective_trace[i - 1] - 1e-12);
}

TEST_CASE("recovers generating coefficients") {
  const Dataset ds = logistic_dgp(20000, 2024, {-0.5, 1.2});
  const std::vector<std::string> cov{"x1"};
  const PropensityModel m = fit_propensity(ds, cov, "t");
  CHECK(m.converged);
  CHECK(std::abs(m.intercept + 0.5) < 0.1);
  CHECK(std::abs(m.coefficients[0] - 1.2) < 0.1);
}

TEST_CASE("no signal gives flat scores") {
  const std::size_t n = 400;
  std::vector<double> x(n), t(n);
  // x takes the same values in both arms, so the MLE slope is exactly zero.
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = static_cast<double>((i / 2) % 10);
    t[i] = static_cast<double>(i % 2);
  }
  const Dataset ds = make_dataset({numeric_column("x", ColumnKind::Continuous, x), numeric_column("t", ColumnKind::Binary, t)});
  const std::vector<std::string> cov{"x"};
  const PropensityModel m = fit_propensity(ds, cov, "t");
  CHECK(std::abs(m.coefficients[0]) < 1e-4);
  for (double p : predict(m, ds)) CHECK(std::abs(p - 0.5) < 1e-4);
}

TEST_CASE("separation stays finite") {
  std::vector<double> x, t;
  for (int i = 0; i < 50; ++i) {
    x.push_back(i);
    t.push_back(i >= 25 ? 1.0 : 0.0);
  }
  const Dataset ds = make_dataset({numeric_column("x", ColumnKind::Continuous, x), numeric_column("t", ColumnKind::Binary, t)});
  const std::vector<std::string> cov{"x"};
  const PropensityModel m = fit_propensity(ds, cov, "t");
  CHECK(m.converged);
  CHECK(std::isfinite(m.coefficients[0]));
  CHECK(std::isfinite(m.intercept));
  CHECK(m.coefficients[0] > 0);
}

TEST_CASE("prediction clipping") {
  const Dataset ds = make_dataset({numeric_column("t", ColumnKind::Binary, {0, 1, 0})});
  PropensityModel flat;
  for (double p : predict(flat, ds)) CHECK(p == 0.5);
  PropensityModel high;
  high.intercept = 20;
  for (double p : predict(high, ds)) CHECK(p == 1.0 - 1e-6);
  PropensityModel low;
  low.intercept = -40;
  for (double p : predict(low, ds)) CHECK(p == 1e-6);
}

TEST_CASE("affine rescaling of a covariate leaves scores unchanged") {
  const Dataset ds = logistic_dgp(300, 8, {0.1, 0.7, -0.4});
  std::vector<double> scaled(ds.numeric("x1").begin(), ds.numeric("x1").end());
  for (auto& v : scaled) v = 1000.0 * v - 42.0;
  const Dataset ds2 = ds.with_column(numeric_column("x1", ColumnKind::Continuous, scaled));
  const std::vector<std::string> cov{"x1", "x2"};
  const auto p1 = predict(fit_propensity(ds, cov, "t"), ds);
  const auto p2 = predict(fit_propensity(ds2, cov, "t"), ds2);
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-8));
}

TEST_CASE("fit preconditions") {
  const Dataset ds = make_dataset({numeric_column("x", ColumnKind::Continuous, {1, 2, 3, std::nan("")}),
                                   numeric_column("c", ColumnKind::Continuous, {4, 4, 4, 4}),
                                   numeric_column("t", ColumnKind::Binary, {1, 1, 1, 0})});
  const std::vector<std::string> x{"x"};
  CHECK(code_of([&] { fit_propensity(ds, x, "t"); }) == "degenerate_treatment");
  const std::vector<std::string> c{"c"};
  const PropensityModel m = fit_propensity(ds, c, "t");
  CHECK(m.rank_warnings == std::vector<std::string>{"c"});
  CHECK(m.coefficients[0] == 0.0);
  const std::vector<std::string> missing{"nope"};
  CHECK(code_of([&] { fit_propensity(ds, missing, "t"); }) == "missing_covariate");
  FitOptions bad;
  bad.lambda = -1;
  CHECK(code_of([&] { fit_propensity(ds, c, "t", bad); }) == "bad_request");
  try {
    fit_propensity(ds, x, "t");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Statistical);
  }
}

TEST_CASE("missing rows are dropped and counted") {
  const Dataset ds = make_dataset({numeric_column("x", ColumnKind::Continuous, {1, 2, std::nan(""), 4, 5, 1.5}),
                                   numeric_column("t", ColumnKind::Binary, {0, 1, 1, 0, 1, 0})});
  const std::vector<std::string> x{"x"};
  const PropensityModel m = fit_propensity(ds, x, "t");
  CHECK(m.n_dropped == 1);
  CHECK(std::isnan(predict(m, ds)[2]));
}

TEST_CASE("ipw weights") {
  const std::vector<double> half(4, 0.5);
  const std::vector<double> t{1, 0, 1, 0};
  for (double w : ipw_weights(half, t).weights) CHECK(w == 2.0);
  for (double w : ipw_weights(half, t, true).weights) CHECK(w == 1.0);
  const std::vector<double> p{0.1, 0.1};
  const std::vector<double> t2{1, 0};
  const auto w = ipw_weights(p, t2).weights;
  CHECK(w[0] == doctest::Approx(10.0));
  CHECK(w[1] == doctest::Approx(1.0 / 0.9));
  const std::vector<double> zero{0.0, 0.5};
  CHECK(code_of([&] { ipw_weights(zero, t2); }) == "score_out_of_range");
  CHECK(code_of([&] { ipw_weights(half, t2); }) == "length_mismatch");
}

TEST_CASE("mirrored histogram") {
  const std::vector<double> s{0.05, 0.55};
  const std::vector<double> t{0, 0};
  const auto h = propensity_histogram(s, t, 10);
  CHECK(h.edges.size() == 11);
  CHECK(h.control[0] == 1);
  CHECK(h.control[5] == 1);
  const std::vector<double> one{1.0};
  const std::vector<double> tr{1};
  CHECK(propensity_histogram(one, tr, 10).treated[9] == 1);
  const auto j = histogram_to_json(h);
  CHECK(j["edges"].size() == 11);
}

TEST_CASE("selection by score") {
  const std::vector<double> s{0.1, 0.5, 0.9};
  auto sel = select_by_score(s, 0.4, 1.0);
  CHECK(sel.selection == std::vector<RowId>{1, 2});
  CHECK(sel.inverse == std::vector<RowId>{0});
  sel = select_by_score(s, 0.0, 1.0);
  CHECK(sel.selection.size() == 3);
  CHECK(sel.inverse.empty());
  CHECK(select_by_score(s, 0.2, 0.2).selection.empty());
  const std::vector<RowId> ids{10, 20, 30};
  CHECK(select_by_score(s, 0.4, 1.0, ids).selection == std::vector<RowId>{20, 30});
  const json j = selection_to_json(select_by_score(s, 0.4, 1.0));
  CHECK(j["selection"] == json{1, 2});
  CHECK(j["inverse"] == json{0});
}

TEST_CASE("model JSON round trip") {
  PropensityModel m;
  m.covariate_names = {"a", "b"};
  m.intercept = 0.25;
  m.coefficients = {1.5, -2};
  m.converged = true;
  m.n_iterations = 7;
  m.lambda = 1e-6;
  const PropensityModel back = model_from_json(model_to_json(m));
  CHECK(back.coefficients == m.coefficients);
  CHECK(back.covariate_names == m.covariate_names);
  CHECK(back.intercept == m.intercept);
  CHECK(code_of([] { model_from_json(json::object()); }) == "schema_error");
}
