#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cwb/dataset.hpp"
#include "cwb/json.hpp"
#include "cwb/propensity.hpp"

namespace cwb {

inline constexpr double kBalanceThreshold = 0.1;

// Absolute standardized mean difference |mu_t - mu_c| / sqrt((v_t + v_c) / 2).
// Binary covariates use p(1-p); continuous ones use the weighted variance
// sum w (x - mu)^2 / (W - sum w^2 / W), which is the n-1 sample variance when
// weights are uniform (or omitted). nullopt means Undefined: zero pooled
// variance with differing means.
std::optional<double> smd(std::span<const double> treated, std::span<const double> control, ColumnKind kind,
                          std::span<const double> treated_weights = {}, std::span<const double> control_weights = {});

enum class AdjustmentMode { CohortAdjusted, WeightAdjusted };

struct CovariateBalance {
  std::string name;
  std::optional<double> unadjusted;
  std::optional<double> adjusted;
  bool flagged = false;
};

struct BalanceReport {
  AdjustmentMode mode = AdjustmentMode::CohortAdjusted;
  std::vector<CovariateBalance> covariates;
  // Sizes of the adjusted side: the cohort, or the weighted full sample.
  std::size_t n_treated = 0;
  std::size_t n_control = 0;
  double ess_treated = 0.0;
  double ess_control = 0.0;
  std::size_t unadjusted_n_treated = 0;
  std::size_t unadjusted_n_control = 0;
  std::size_t n_dropped = 0;
};

// Undefined adjusted values count as flagged.
bool is_flagged(const std::optional<double>& adjusted);

// At most one of `adjusted` and `weights` may be given. Weights align with
// the rows of `unadjusted`. With neither, adjusted equals unadjusted.
BalanceReport balance_report(const Dataset& unadjusted, std::span<const std::string> covariates,
                             std::string_view treatment, const Dataset* adjusted = nullptr,
                             const WeightVector* weights = nullptr);

struct CovariateDetail {
  std::string name;
  std::vector<double> edges;  // shared by all four histograms
  std::vector<double> unadjusted_treated;
  std::vector<double> unadjusted_control;
  std::vector<double> adjusted_treated;  // weighted sums in WeightAdjusted mode
  std::vector<double> adjusted_control;
  double unadjusted_mean_treated = 0.0;
  double unadjusted_mean_control = 0.0;
  double adjusted_mean_treated = 0.0;
  double adjusted_mean_control = 0.0;
  std::optional<double> adjusted_asmd;
  bool flagged = false;
};

inline constexpr std::size_t kDetailBins = 20;

// Per-covariate distributions for the details panel. By default only flagged
// covariates are shown, most imbalanced first; `show` overrides the list.
std::vector<CovariateDetail> details_view(const BalanceReport& report, const Dataset& unadjusted,
                                          std::string_view treatment, const Dataset* adjusted,
                                          const WeightVector* weights,
                                          std::optional<std::vector<std::string>> show = std::nullopt);

enum class SortKey { Adjusted, Unadjusted, Name };

SortKey sort_key_from_string(std::string_view text);

// Stable sort; ties (and the Name key's duplicates) fall back to name order.
// Undefined values rank above every defined value.
BalanceReport sort_report(BalanceReport report, SortKey key, bool descending);

json report_to_json(const BalanceReport& report);
BalanceReport report_from_json(const json& doc);
json details_to_json(const std::vector<CovariateDetail>& details);

}  // namespace cwb
