#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cwb/dataset.hpp"
#include "cwb/json.hpp"

namespace cwb {

inline constexpr double kScoreClip = 1e-6;

struct PropensityModel {
  std::vector<std::string> covariate_names;
  double intercept = 0.0;
  std::vector<double> coefficients;  // original covariate scale
  bool converged = false;
  std::size_t n_iterations = 0;
  double lambda = 0.0;
  // Covariates with zero variance in the fitting data; their coefficient is 0.
  std::vector<std::string> rank_warnings;
  std::size_t n_dropped = 0;
};

struct FitOptions {
  double lambda = 1e-6;
  double tol = 1e-8;
  std::size_t max_iter = 100;
};

// Ridge-penalized logistic regression of `treatment` on `covariates` by IRLS
// on internally standardized covariates. The intercept is not penalized.
// Rows with a missing value in any used column are dropped and counted.
PropensityModel fit_propensity(const Dataset& ds, std::span<const std::string> covariates, std::string_view treatment,
                               const FitOptions& options = {});

// sigmoid(intercept + x'beta), clipped to [kScoreClip, 1 - kScoreClip].
// Rows with a missing covariate get NaN.
std::vector<double> predict(const PropensityModel& model, const Dataset& ds);

// Objective pieces on a design matrix whose first column is the intercept.
// penalty = lambda/2 * |beta[1:]|^2.
double penalized_loglik(const Eigen::MatrixXd& design, std::span<const double> treated, const Eigen::VectorXd& beta,
                        double lambda);
Eigen::VectorXd penalized_gradient(const Eigen::MatrixXd& design, std::span<const double> treated,
                                   const Eigen::VectorXd& beta, double lambda);

struct IrlsResult {
  Eigen::VectorXd beta;
  bool converged = false;
  std::size_t n_iterations = 0;
  std::vector<double> objective_trace;  // objective after each accepted step, starting at beta = 0
};

IrlsResult irls_logistic(const Eigen::MatrixXd& design, std::span<const double> treated, double lambda, double tol,
                         std::size_t max_iter);

struct WeightVector {
  std::vector<double> weights;
  bool stabilized = false;
};

// 1/p for treated rows, 1/(1-p) for controls; stabilized weights are scaled by
// the empirical marginal rate of the unit's own group.
WeightVector ipw_weights(std::span<const double> scores, std::span<const double> treated, bool stabilized = false);

struct MirroredHistogram {
  std::vector<double> edges;  // n_bins + 1 edges spanning [0, 1]
  std::vector<std::size_t> treated;
  std::vector<std::size_t> control;
};

// Equal-width bins over [0, 1]; the last bin is closed on the right.
MirroredHistogram propensity_histogram(std::span<const double> scores, std::span<const double> treated,
                                       std::size_t n_bins = 20);

struct ScoreSelection {
  std::vector<RowId> selection;
  std::vector<RowId> inverse;
};

// Partitions ids by lo <= score <= hi. Without `ids`, positions are used.
ScoreSelection select_by_score(std::span<const double> scores, double lo, double hi,
                               std::span<const RowId> ids = {});

json model_to_json(const PropensityModel& model);
PropensityModel model_from_json(const json& doc);
json weights_to_json(const WeightVector& w);
WeightVector weights_from_json(const json& doc);
json histogram_to_json(const MirroredHistogram& h);
json selection_to_json(const ScoreSelection& s);

}  // namespace cwb
