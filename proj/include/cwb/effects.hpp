#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cwb/dataset.hpp"
#include "cwb/json.hpp"
#include "cwb/matching.hpp"
#include "cwb/propensity.hpp"

namespace cwb {

inline constexpr std::size_t kDefaultBootstrap = 1000;
inline constexpr std::uint64_t kDefaultSeed = 42;
inline constexpr std::size_t kMaxFacetVariables = 3;
inline constexpr std::size_t kKdeGridPoints = 128;

// y(treated) - y(control) for every pair, in pair order.
std::vector<double> pair_effects(const MatchResult& result, const Dataset& ds, std::string_view outcome);

enum class EffectMethod { Matched, IPW };

struct EffectRecord {
  EffectMethod method = EffectMethod::Matched;
  double ate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::vector<double> ites;  // Matched only
  std::size_t n_boot = 0;
  std::uint64_t seed = 0;
};

// Mean ITE with a 95% percentile bootstrap interval over resampled pairs.
EffectRecord ate_matched(std::span<const double> ites, std::size_t n_boot = kDefaultBootstrap,
                         std::uint64_t seed = kDefaultSeed);

// Normalized (Hajek) IPW difference in weighted outcome means, with a row
// bootstrap interval. Weights align with the rows of `ds`.
EffectRecord ate_ipw(const Dataset& ds, std::string_view treatment, std::string_view outcome,
                     const WeightVector& weights, std::size_t n_boot = kDefaultBootstrap,
                     std::uint64_t seed = kDefaultSeed);

// Arithmetic mean ignoring missing values.
double default_threshold(std::span<const double> values);

struct SubgroupSpec {
  std::vector<std::string> variables;  // 1-3; the first is the x-axis dimension
  std::map<std::string, double> thresholds;
};

struct SubgroupKeyPart {
  std::string variable;
  bool binary = false;
  bool high = false;       // value 1, or x >= threshold
  double threshold = 0.0;  // continuous variables only
  std::string label() const;
};

struct SubgroupCell {
  std::vector<SubgroupKeyPart> key;
  std::size_t n = 0;
  // Summary statistics are NaN for empty cells.
  double mean = 0.0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double whisker_low = 0.0;
  double whisker_high = 0.0;
  double bandwidth = 0.0;
  std::vector<double> density;  // on SubgroupTable::grid; empty for empty cells
  std::vector<double> values;
};

struct SubgroupTable {
  std::vector<std::string> variables;
  std::map<std::string, double> thresholds;  // thresholds applied to continuous variables
  std::size_t n = 0;
  double overall_mean = 0.0;
  double axis_low = 0.0;  // shared ITE axis
  double axis_high = 0.0;
  bool zero_in_axis = false;
  std::vector<double> grid;
  std::vector<SubgroupCell> cells;
  bool sign_flip_overall = false;
};

// Covariates of the treated unit of every pair, one row per pair; the row id
// is the pair index.
Dataset pair_covariates(const MatchResult& result, const Dataset& ds);

// Splits ITEs by up to three variables of `pair_data` (one row per ITE).
// Binary variables split by value, continuous ones into x < t and x >= t with
// t defaulting to the mean. Every combination becomes a cell, empty or not.
SubgroupTable facet(std::span<const double> ites, const Dataset& pair_data, const SubgroupSpec& spec);

json effect_to_json(const EffectRecord& record);
json subgroup_table_to_json(const SubgroupTable& table);

// Linear-interpolation quantile (type 7) of sorted data.
double quantile_sorted(std::span<const double> sorted, double q);

}  // namespace cwb
