#include "cwb/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cwb/kernels.hpp"

namespace cwb {

namespace {

double softplus(double eta) { return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

double sigmoid(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double clip_score(double p) { return std::clamp(p, kScoreClip, 1.0 - kScoreClip); }

void check_flags(std::span<const double> treated) {
  for (double t : treated) {
    if (t != 0.0 && t != 1.0) fail(ErrorKind::Validation, errc::schema_error, "treatment flags must be 0 or 1");
  }
}

}  // namespace

double penalized_loglik(const Eigen::MatrixXd& design, std::span<const double> treated, const Eigen::VectorXd& beta,
                        double lambda) {
  const Eigen::VectorXd eta = design * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) ll += treated[static_cast<std::size_t>(i)] * eta(i) - softplus(eta(i));
  return ll - 0.5 * lambda * beta.tail(beta.size() - 1).squaredNorm();
}

Eigen::VectorXd penalized_gradient(const Eigen::MatrixXd& design, std::span<const double> treated,
                                   const Eigen::VectorXd& beta, double lambda) {
  const Eigen::VectorXd eta = design * beta;
  Eigen::VectorXd resid(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) resid(i) = treated[static_cast<std::size_t>(i)] - sigmoid(eta(i));
  Eigen::VectorXd g = design.transpose() * resid;
  g.tail(g.size() - 1) -= lambda * beta.tail(beta.size() - 1);
  return g;
}

IrlsResult irls_logistic(const Eigen::MatrixXd& design, std::span<const double> treated, double lambda, double tol,
                         std::size_t max_iter) {
  const auto n = design.rows();
  const auto p = design.cols();
  IrlsResult out;
  out.beta = Eigen::VectorXd::Zero(p);
  double objective = penalized_loglik(design, treated, out.beta, lambda);
  out.objective_trace.push_back(objective);

  std::vector<double> w(static_cast<std::size_t>(n));
  std::vector<double> resid(static_cast<std::size_t>(n));
  for (std::size_t iter = 1; iter <= max_iter; ++iter) {
    out.n_iterations = iter;
    const Eigen::VectorXd eta = design * out.beta;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = sigmoid(eta(i));
      const auto ui = static_cast<std::size_t>(i);
      w[ui] = mu * (1.0 - mu);
      resid[ui] = treated[ui] - mu;
    }
    auto gram = kernels::parallel::weighted_gram(design, w, resid);
    Eigen::VectorXd grad = gram.xtr;
    grad.tail(p - 1) -= lambda * out.beta.tail(p - 1);
    Eigen::MatrixXd hess = gram.xtwx;
    hess.diagonal().tail(p - 1).array() += lambda;

    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    Eigen::VectorXd step = ldlt.solve(grad);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) {
      // Fully separated fits can leave the intercept direction flat.
      hess.diagonal().array() += 1e-10 * std::max(1.0, hess.diagonal().maxCoeff());
      step = hess.ldlt().solve(grad);
    }

    // Step halving keeps the penalized likelihood non-decreasing.
    double scale = 1.0;
    Eigen::VectorXd candidate = out.beta + step;
    double cand_obj = penalized_loglik(design, treated, candidate, lambda);
    int halvings = 0;
    while (!(cand_obj >= objective) && halvings < 40) {
      scale *= 0.5;
      candidate = out.beta + scale * step;
      cand_obj = penalized_loglik(design, treated, candidate, lambda);
      ++halvings;
    }
    if (!(cand_obj >= objective)) {
      // No ascent direction left at machine precision.
      out.converged = (scale * step).cwiseAbs().maxCoeff() < tol;
      break;
    }
    const double change = (candidate - out.beta).cwiseAbs().maxCoeff();
    out.beta = std::move(candidate);
    objective = cand_obj;
    out.objective_trace.push_back(objective);
    if (change < tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

PropensityModel fit_propensity(const Dataset& ds, std::span<const std::string> covariates, std::string_view treatment,
                               const FitOptions& options) {
  if (options.lambda < 0.0 || !std::isfinite(options.lambda)) {
    fail(ErrorKind::Validation, errc::bad_request, "lambda must be a finite value >= 0");
  }
  const Column& tcol = ds.column(treatment);
  if (tcol.kind != ColumnKind::Binary) {
    fail(ErrorKind::Validation, errc::schema_error, "treatment column " + tcol.name + " must be binary");
  }
  for (const auto& c : covariates) {
    if (!ds.has_column(c)) fail(ErrorKind::Validation, errc::missing_covariate, "missing covariate " + c);
    if (!ds.column(c).is_numeric()) {
      fail(ErrorKind::Validation, errc::not_numeric, "covariate " + c + " is categorical; one-hot encode it first");
    }
  }
  std::vector<std::string> used(covariates.begin(), covariates.end());
  used.emplace_back(treatment);
  auto cc = complete_cases(ds, used);
  const Dataset& data = cc.data;
  const std::size_t n = data.n_rows();

  const auto t = data.numeric(treatment);
  const double n_treated = std::count(t.begin(), t.end(), 1.0);
  if (n == 0 || n_treated == 0 || n_treated == static_cast<double>(n)) {
    fail(ErrorKind::Statistical, errc::degenerate_treatment, "treatment " + std::string(treatment) + " has a single class");
  }

  PropensityModel model;
  model.covariate_names.assign(covariates.begin(), covariates.end());
  model.lambda = options.lambda;
  model.n_dropped = cc.n_dropped;
  model.coefficients.assign(covariates.size(), 0.0);

  // Standardize the non-constant covariates; constant ones are left out.
  std::vector<std::size_t> active;
  std::vector<double> means, sds;
  for (std::size_t j = 0; j < covariates.size(); ++j) {
    const auto x = data.numeric(covariates[j]);
    double m = 0.0;
    for (double v : x) m += v;
    m /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(m)))) {
      model.rank_warnings.push_back(covariates[j]);
      continue;
    }
    active.push_back(j);
    means.push_back(m);
    sds.push_back(sd);
  }

  Eigen::MatrixXd design(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(active.size() + 1));
  design.col(0).setOnes();
  for (std::size_t a = 0; a < active.size(); ++a) {
    const auto x = data.numeric(covariates[active[a]]);
    for (std::size_t i = 0; i < n; ++i) {
      design(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a + 1)) = (x[i] - means[a]) / sds[a];
    }
  }

  const auto fit = irls_logistic(design, t, options.lambda, options.tol, options.max_iter);
  model.converged = fit.converged;
  model.n_iterations = fit.n_iterations;
  double intercept = fit.beta(0);
  for (std::size_t a = 0; a < active.size(); ++a) {
    const double b = fit.beta(static_cast<Eigen::Index>(a + 1)) / sds[a];
    model.coefficients[active[a]] = b;
    intercept -= b * means[a];
  }
  model.intercept = intercept;
  return model;
}

std::vector<double> predict(const PropensityModel& model, const Dataset& ds) {
  std::vector<std::span<const double>> cols;
  for (const auto& c : model.covariate_names) {
    if (!ds.has_column(c)) fail(ErrorKind::Validation, errc::missing_covariate, "missing covariate " + c);
    cols.push_back(ds.numeric(c));
  }
  std::vector<double> scores(ds.n_rows());
  for (std::size_t i = 0; i < ds.n_rows(); ++i) {
    double eta = model.intercept;
    for (std::size_t j = 0; j < cols.size(); ++j) eta += model.coefficients[j] * cols[j][i];
    scores[i] = std::isnan(eta) ? eta : clip_score(sigmoid(eta));
  }
  return scores;
}

WeightVector ipw_weights(std::span<const double> scores, std::span<const double> treated, bool stabilized) {
  if (scores.size() != treated.size()) {
    fail(ErrorKind::Validation, errc::length_mismatch, "scores and treatment flags differ in length");
  }
  check_flags(treated);
  for (double p : scores) {
    if (!(p > 0.0 && p < 1.0)) {
      fail(ErrorKind::Validation, errc::score_out_of_range, "propensity scores must lie strictly inside (0, 1)");
    }
  }
  const double n = static_cast<double>(scores.size());
  const double n1 = static_cast<double>(std::count(treated.begin(), treated.end(), 1.0));
  const double rate1 = n > 0 ? n1 / n : 0.0;
  WeightVector out{std::vector<double>(scores.size()), stabilized};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool t = treated[i] == 1.0;
    double w = t ? 1.0 / scores[i] : 1.0 / (1.0 - scores[i]);
    if (stabilized) w *= t ? rate1 : 1.0 - rate1;
    out.weights[i] = w;
  }
  return out;
}

MirroredHistogram propensity_histogram(std::span<const double> scores, std::span<const double> treated,
                                       std::size_t n_bins) {
  if (n_bins == 0) fail(ErrorKind::Validation, errc::bad_request, "n_bins must be at least 1");
  if (scores.empty()) fail(ErrorKind::Validation, errc::empty_input, "no scores to bin");
  if (scores.size() != treated.size()) {
    fail(ErrorKind::Validation, errc::length_mismatch, "scores and treatment flags differ in length");
  }
  check_flags(treated);
  MirroredHistogram h;
  h.edges.resize(n_bins + 1);
  for (std::size_t k = 0; k <= n_bins; ++k) h.edges[k] = static_cast<double>(k) / static_cast<double>(n_bins);
  h.treated.assign(n_bins, 0);
  h.control.assign(n_bins, 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores[i];
    if (!(s >= 0.0 && s <= 1.0)) fail(ErrorKind::Validation, errc::score_out_of_range, "scores must lie in [0, 1]");
    auto bin = static_cast<std::size_t>(s * static_cast<double>(n_bins));
    bin = std::min(bin, n_bins - 1);
    (treated[i] == 1.0 ? h.treated : h.control)[bin] += 1;
  }
  return h;
}

ScoreSelection select_by_score(std::span<const double> scores, double lo, double hi, std::span<const RowId> ids) {
  if (lo > hi) fail(ErrorKind::Validation, errc::bad_request, "selection range must satisfy lo <= hi");
  if (!ids.empty() && ids.size() != scores.size()) {
    fail(ErrorKind::Validation, errc::length_mismatch, "scores and row ids differ in length");
  }
  ScoreSelection out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const RowId id = ids.empty() ? static_cast<RowId>(i) : ids[i];
    (scores[i] >= lo && scores[i] <= hi ? out.selection : out.inverse).push_back(id);
  }
  return out;
}

json model_to_json(const PropensityModel& model) {
  return json{{"covariates", model.covariate_names}, {"intercept", model.intercept},
              {"coefficients", model.coefficients}, {"lambda", model.lambda},
              {"converged", model.converged},       {"n_iterations", model.n_iterations},
              {"rank_warnings", model.rank_warnings}, {"n_dropped", model.n_dropped}};
}

PropensityModel model_from_json(const json& doc) {
  try {
    PropensityModel m;
    m.covariate_names = detail::require(doc, "covariates", "model").get<std::vector<std::string>>();
    m.intercept = detail::require(doc, "intercept", "model").get<double>();
    m.coefficients = detail::require(doc, "coefficients", "model").get<std::vector<double>>();
    m.lambda = detail::require(doc, "lambda", "model").get<double>();
    m.converged = detail::require(doc, "converged", "model").get<bool>();
    m.n_iterations = detail::require(doc, "n_iterations", "model").get<std::size_t>();
    if (doc.contains("rank_warnings")) m.rank_warnings = doc["rank_warnings"].get<std::vector<std::string>>();
    if (doc.contains("n_dropped")) m.n_dropped = doc["n_dropped"].get<std::size_t>();
    if (m.coefficients.size() != m.covariate_names.size()) {
      fail(ErrorKind::Validation, errc::schema_error, "model coefficients and covariates differ in length");
    }
    return m;
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, errc::schema_error, std::string("model document: ") + e.what());
  }
}

json weights_to_json(const WeightVector& w) { return json{{"weights", w.weights}, {"stabilized", w.stabilized}}; }

WeightVector weights_from_json(const json& doc) {
  try {
    if (doc.is_array()) return WeightVector{doc.get<std::vector<double>>(), false};
    WeightVector w{detail::require(doc, "weights", "weights").get<std::vector<double>>(),
                   doc.value("stabilized", false)};
    return w;
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, errc::schema_error, std::string("weights document: ") + e.what());
  }
}

json histogram_to_json(const MirroredHistogram& h) {
  return json{{"edges", h.edges}, {"treated", h.treated}, {"control", h.control}};
}

json selection_to_json(const ScoreSelection& s) { return json{{"selection", s.selection}, {"inverse", s.inverse}}; }

}  // namespace cwb
