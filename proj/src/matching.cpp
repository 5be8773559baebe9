#include "cwb/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <Eigen/Dense>

#include "cwb/kernels.hpp"

namespace cwb {

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// Whitens the covariate rows so Euclidean distance equals Mahalanobis
// distance under the pooled sample covariance.
Eigen::MatrixXd whitened_points(const Dataset& ds, const std::vector<std::string>& covariates,
                                const std::vector<std::size_t>& rows) {
  const auto k = static_cast<Eigen::Index>(covariates.size());
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd x(k, n);
  for (Eigen::Index a = 0; a < k; ++a) {
    const auto col = ds.numeric(covariates[static_cast<std::size_t>(a)]);
    for (Eigen::Index i = 0; i < n; ++i) x(a, i) = col[rows[static_cast<std::size_t>(i)]];
  }
  if (n < 2) fail(ErrorKind::Statistical, errc::singular_covariance, "Mahalanobis matching needs at least two units");
  const Eigen::VectorXd mean = x.rowwise().mean();
  const Eigen::MatrixXd centered = x.colwise() - mean;
  Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(n - 1);

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const double trace = cov.trace();
  const double tiny = 1e-12 * std::max(trace, std::numeric_limits<double>::min());
  bool ok = llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().minCoeff() > std::sqrt(tiny);
  if (!ok) {
    cov.diagonal().array() += 1e-8 * trace / static_cast<double>(k);
    llt.compute(cov);
    ok = trace > 0.0 && llt.info() == Eigen::Success;
  }
  if (!ok) fail(ErrorKind::Statistical, errc::singular_covariance, "covariance of the matching covariates is singular");
  return llt.matrixL().solve(x);
}

}  // namespace

std::string_view to_string(MatchMetric m) {
  switch (m) {
    case MatchMetric::PropensityAbsDiff: return "propensity";
    case MatchMetric::PropensityLogitDiff: return "logit";
    case MatchMetric::Mahalanobis: return "mahalanobis";
  }
  return "propensity";
}

std::string_view to_string(MatchOrder o) {
  return o == MatchOrder::DescendingPropensity ? "descending_propensity" : "data";
}

MatchMetric match_metric_from_string(std::string_view text) {
  if (text == "propensity" || text == "abs") return MatchMetric::PropensityAbsDiff;
  if (text == "logit") return MatchMetric::PropensityLogitDiff;
  if (text == "mahalanobis") return MatchMetric::Mahalanobis;
  fail(ErrorKind::Validation, errc::bad_request, "unknown match metric: " + std::string(text));
}

MatchOrder match_order_from_string(std::string_view text) {
  if (text == "descending_propensity" || text == "descending") return MatchOrder::DescendingPropensity;
  if (text == "data") return MatchOrder::DataOrder;
  fail(ErrorKind::Validation, errc::bad_request, "unknown match order: " + std::string(text));
}

MatchResult match(const Dataset& ds, std::string_view treatment, const MatchSpec& spec,
                  std::span<const double> scores) {
  const Column& tcol = ds.column(treatment);
  if (tcol.kind != ColumnKind::Binary) {
    fail(ErrorKind::Validation, errc::schema_error, "treatment column " + tcol.name + " must be binary");
  }
  if (spec.caliper && !(*spec.caliper > 0.0)) fail(ErrorKind::Validation, errc::bad_request, "caliper must be positive");
  const bool uses_scores = spec.metric != MatchMetric::Mahalanobis;
  if (!scores.empty() && scores.size() != ds.n_rows()) {
    fail(ErrorKind::Validation, errc::length_mismatch, "scores do not align with the dataset rows");
  }
  if (uses_scores && scores.empty()) fail(ErrorKind::Validation, errc::missing_scores, "propensity metrics need scores");
  if (spec.metric == MatchMetric::Mahalanobis) {
    if (spec.covariates.empty()) fail(ErrorKind::Validation, errc::bad_request, "Mahalanobis matching needs covariates");
    for (const auto& c : spec.covariates) {
      if (!ds.has_column(c)) fail(ErrorKind::Validation, errc::missing_covariate, "missing covariate " + c);
      if (!ds.column(c).is_numeric()) fail(ErrorKind::Validation, errc::not_numeric, "covariate " + c + " is categorical");
    }
  }

  MatchResult result;
  result.spec = spec;
  if (spec.order == MatchOrder::DescendingPropensity && scores.empty()) result.spec.order = MatchOrder::DataOrder;

  // Eligible rows: observed treatment, score and covariates.
  const auto t = ds.numeric(treatment);
  std::vector<std::size_t> treated_rows, control_rows;
  for (std::size_t i = 0; i < ds.n_rows(); ++i) {
    if (std::isnan(t[i])) continue;
    if (!scores.empty()) {
      if (std::isnan(scores[i])) continue;
      if (uses_scores && !(scores[i] > 0.0 && scores[i] < 1.0)) {
        fail(ErrorKind::Validation, errc::score_out_of_range, "scores must lie strictly inside (0, 1)");
      }
    }
    bool complete = true;
    for (const auto& c : spec.covariates) {
      if (spec.metric == MatchMetric::Mahalanobis && std::isnan(ds.numeric(c)[i])) complete = false;
    }
    if (!complete) continue;
    (t[i] == 1.0 ? treated_rows : control_rows).push_back(i);
  }
  if (control_rows.empty()) fail(ErrorKind::Statistical, errc::no_controls, "no eligible control units");

  const auto& ids = ds.row_ids();
  std::vector<double> control_values;
  Eigen::MatrixXd control_points, treated_points;
  if (uses_scores) {
    for (auto r : control_rows) {
      control_values.push_back(spec.metric == MatchMetric::PropensityLogitDiff ? logit(scores[r]) : scores[r]);
    }
  } else {
    std::vector<std::size_t> all_rows = treated_rows;
    all_rows.insert(all_rows.end(), control_rows.begin(), control_rows.end());
    const Eigen::MatrixXd white = whitened_points(ds, spec.covariates, all_rows);
    const auto nt = static_cast<Eigen::Index>(treated_rows.size());
    treated_points = white.leftCols(nt);
    control_points = white.rightCols(white.cols() - nt);
  }

  double caliper = spec.caliper.value_or(std::numeric_limits<double>::infinity());
  if (!spec.caliper && spec.metric == MatchMetric::PropensityLogitDiff) {
    std::vector<double> all_logits;
    for (auto r : treated_rows) all_logits.push_back(logit(scores[r]));
    for (auto r : control_rows) all_logits.push_back(logit(scores[r]));
    caliper = kDefaultLogitCaliperSd * sample_sd(all_logits);
    if (!(caliper > 0.0)) caliper = std::numeric_limits<double>::min();
    result.spec.caliper = caliper;
  }

  // Visit order over indices into treated_rows.
  std::vector<std::size_t> order(treated_rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (result.spec.order == MatchOrder::DescendingPropensity) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double sa = scores[treated_rows[a]];
      const double sb = scores[treated_rows[b]];
      if (sa != sb) return sa > sb;
      return ids[treated_rows[a]] < ids[treated_rows[b]];
    });
  }

  std::vector<std::uint8_t> available(control_rows.size(), 1);
  std::vector<std::int64_t> control_keys;
  control_keys.reserve(control_rows.size());
  for (auto r : control_rows) control_keys.push_back(ids[r]);

  std::vector<std::uint8_t> used_control(control_rows.size(), 0);
  for (std::size_t k : order) {
    const std::size_t row = treated_rows[k];
    kernels::Nearest best;
    if (uses_scores) {
      const double q = spec.metric == MatchMetric::PropensityLogitDiff ? logit(scores[row]) : scores[row];
      best = kernels::parallel::nearest_scalar(q, control_values, available, control_keys, caliper);
    } else {
      best = kernels::parallel::nearest_vector(treated_points.col(static_cast<Eigen::Index>(k)), control_points,
                                               available, control_keys, caliper);
    }
    if (!best.found()) {
      result.unmatched_treated.push_back(ids[row]);
      continue;
    }
    result.pairs.push_back({ids[row], control_keys[best.index], best.distance});
    used_control[best.index] = 1;
    if (!spec.with_replacement) available[best.index] = 0;
  }
  std::sort(result.unmatched_treated.begin(), result.unmatched_treated.end());
  for (std::size_t j = 0; j < control_rows.size(); ++j) {
    if (!used_control[j]) result.unmatched_control.push_back(control_keys[j]);
  }
  return result;
}

Dataset matched_cohort(const Dataset& ds, const MatchResult& result) {
  std::vector<RowId> ids;
  ids.reserve(result.pairs.size() * 2);
  for (const auto& p : result.pairs) {
    ids.push_back(p.treated);
    ids.push_back(p.control);
  }
  return ds.select_ids(ids);
}

json match_spec_to_json(const MatchSpec& spec) {
  json doc{{"metric", std::string(to_string(spec.metric))},
           {"caliper", spec.caliper ? json(*spec.caliper) : json(nullptr)},
           {"with_replacement", spec.with_replacement},
           {"order", std::string(to_string(spec.order))}};
  if (!spec.covariates.empty()) doc["covariates"] = spec.covariates;
  return doc;
}

MatchSpec match_spec_from_json(const json& doc) {
  try {
    MatchSpec spec;
    if (!doc.is_object()) fail(ErrorKind::Validation, errc::schema_error, "match spec must be an object");
    if (doc.contains("metric")) spec.metric = match_metric_from_string(doc["metric"].get<std::string>());
    if (doc.contains("covariates")) spec.covariates = doc["covariates"].get<std::vector<std::string>>();
    if (doc.contains("caliper") && !doc["caliper"].is_null()) spec.caliper = doc["caliper"].get<double>();
    spec.with_replacement = doc.value("with_replacement", false);
    if (doc.contains("order")) spec.order = match_order_from_string(doc["order"].get<std::string>());
    return spec;
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, errc::schema_error, std::string("match spec: ") + e.what());
  }
}

json match_to_json(const MatchResult& result) {
  json pairs = json::array();
  for (const auto& p : result.pairs) pairs.push_back(json::array({p.treated, p.control, p.distance}));
  return json{{"pairs", std::move(pairs)},
              {"unmatched_treated", result.unmatched_treated},
              {"unmatched_control", result.unmatched_control},
              {"spec", match_spec_to_json(result.spec)}};
}

MatchResult match_from_json(const json& doc) {
  try {
    MatchResult r;
    for (const auto& p : detail::require(doc, "pairs", "match result")) {
      if (!p.is_array() || p.size() != 3) fail(ErrorKind::Validation, errc::schema_error, "pairs are [treated, control, distance]");
      r.pairs.push_back({p[0].get<RowId>(), p[1].get<RowId>(), p[2].get<double>()});
    }
    r.unmatched_treated = detail::require(doc, "unmatched_treated", "match result").get<std::vector<RowId>>();
    r.unmatched_control = detail::require(doc, "unmatched_control", "match result").get<std::vector<RowId>>();
    r.spec = match_spec_from_json(detail::require(doc, "spec", "match result"));
    return r;
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, errc::schema_error, std::string("match result: ") + e.what());
  }
}

}  // namespace cwb
