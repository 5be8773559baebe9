#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cwb/dataset.hpp"
#include "cwb/json.hpp"

namespace cwb {

enum class MatchMetric { PropensityAbsDiff, PropensityLogitDiff, Mahalanobis };
enum class MatchOrder { DescendingPropensity, DataOrder };

std::string_view to_string(MatchMetric m);
std::string_view to_string(MatchOrder o);
MatchMetric match_metric_from_string(std::string_view text);
MatchOrder match_order_from_string(std::string_view text);

// Default logit caliper, in standard deviations of the logit scores.
inline constexpr double kDefaultLogitCaliperSd = 0.2;

struct MatchSpec {
  MatchMetric metric = MatchMetric::PropensityAbsDiff;
  std::vector<std::string> covariates;  // Mahalanobis only
  // Units: score difference, logit difference, or Mahalanobis distance.
  // Unset means no caliper, except for the logit metric, which then uses
  // kDefaultLogitCaliperSd * sd(logit scores).
  std::optional<double> caliper;
  bool with_replacement = false;
  MatchOrder order = MatchOrder::DescendingPropensity;

  bool operator==(const MatchSpec&) const = default;
};

struct MatchPair {
  RowId treated = 0;
  RowId control = 0;
  double distance = 0.0;
  bool operator==(const MatchPair&) const = default;
};

struct MatchResult {
  std::vector<MatchPair> pairs;  // in matching order
  std::vector<RowId> unmatched_treated;
  std::vector<RowId> unmatched_control;
  // The spec as applied: resolved default caliper and effective order.
  MatchSpec spec;

  bool operator==(const MatchResult&) const = default;
};

// Greedy 1:1 nearest-neighbour matching. Treated units are visited in
// `spec.order` (descending score, ties by row id) and each takes the closest
// eligible control within the caliper, ties going to the smaller control id.
// `scores` align with the rows of `ds`; they are required by the propensity
// metrics and by DescendingPropensity order for the propensity metrics.
// Mahalanobis matching without scores falls back to DataOrder.
MatchResult match(const Dataset& ds, std::string_view treatment, const MatchSpec& spec,
                  std::span<const double> scores = {});

// Matched treated and control rows, original ids preserved.
Dataset matched_cohort(const Dataset& ds, const MatchResult& result);

json match_spec_to_json(const MatchSpec& spec);
MatchSpec match_spec_from_json(const json& doc);
json match_to_json(const MatchResult& result);
MatchResult match_from_json(const json& doc);

}  // namespace cwb
