#include "cwb/effects.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "cwb/kernels.hpp"

namespace cwb {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Bounds of the 95% percentile interval, widened to contain the point
// estimate when the resampling distribution is lopsided.
std::pair<double, double> percentile_ci(std::vector<double> draws, double estimate) {
  std::erase_if(draws, [](double v) { return std::isnan(v); });
  if (draws.empty()) return {estimate, estimate};
  std::sort(draws.begin(), draws.end());
  const double lo = quantile_sorted(draws, 0.025);
  const double hi = quantile_sorted(draws, 0.975);
  return {std::min(lo, estimate), std::max(hi, estimate)};
}

double silverman(std::span<const double> sorted) {
  const auto n = static_cast<double>(sorted.size());
  if (sorted.size() < 2) return 0.0;
  const double m = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : sorted) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  return 0.9 * spread * std::pow(n, -0.2);
}

struct Split {
  std::string variable;
  bool binary = false;
  double threshold = 0.0;
  std::span<const double> values;
};

}  // namespace

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) fail(ErrorKind::Validation, errc::empty_input, "quantile of empty data");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<double> pair_effects(const MatchResult& result, const Dataset& ds, std::string_view outcome) {
  if (!ds.has_column(outcome)) {
    fail(ErrorKind::Validation, errc::missing_outcome, "outcome column " + std::string(outcome) + " is missing");
  }
  if (!ds.column(outcome).is_numeric()) {
    fail(ErrorKind::Validation, errc::not_numeric, "outcome column " + std::string(outcome) + " is categorical");
  }
  const auto y = ds.numeric(outcome);
  auto value_of = [&](RowId id) {
    const auto pos = ds.position_of(id);
    if (!pos) fail(ErrorKind::Validation, errc::stale_ids, "pair references unknown row id " + std::to_string(id));
    const double v = y[*pos];
    if (std::isnan(v)) {
      fail(ErrorKind::Validation, errc::missing_outcome, "row " + std::to_string(id) + " has no outcome value");
    }
    return v;
  };
  std::vector<double> ites;
  ites.reserve(result.pairs.size());
  for (const auto& p : result.pairs) ites.push_back(value_of(p.treated) - value_of(p.control));
  return ites;
}

EffectRecord ate_matched(std::span<const double> ites, std::size_t n_boot, std::uint64_t seed) {
  if (ites.empty()) fail(ErrorKind::Validation, errc::empty_input, "no individual effects to average");
  EffectRecord r;
  r.method = EffectMethod::Matched;
  r.ites.assign(ites.begin(), ites.end());
  r.ate = std::accumulate(ites.begin(), ites.end(), 0.0) / static_cast<double>(ites.size());
  r.n_boot = n_boot;
  r.seed = seed;
  std::tie(r.ci_low, r.ci_high) = percentile_ci(kernels::parallel::bootstrap_means(ites, n_boot, seed), r.ate);
  return r;
}

EffectRecord ate_ipw(const Dataset& ds, std::string_view treatment, std::string_view outcome,
                     const WeightVector& weights, std::size_t n_boot, std::uint64_t seed) {
  const Column& tcol = ds.column(treatment);
  if (tcol.kind != ColumnKind::Binary) {
    fail(ErrorKind::Validation, errc::schema_error, "treatment column " + tcol.name + " must be binary");
  }
  if (!ds.has_column(outcome)) {
    fail(ErrorKind::Validation, errc::missing_outcome, "outcome column " + std::string(outcome) + " is missing");
  }
  if (weights.weights.size() != ds.n_rows()) {
    fail(ErrorKind::Validation, errc::length_mismatch, "weights do not align with the dataset rows");
  }
  for (double w : weights.weights) {
    if (!(w > 0.0) || !std::isfinite(w)) fail(ErrorKind::Validation, errc::non_positive_weight, "weights must be positive");
  }
  const auto t = ds.numeric(treatment);
  const auto y = ds.numeric(outcome);
  std::vector<double> yy, tt, ww;
  for (std::size_t i = 0; i < ds.n_rows(); ++i) {
    if (std::isnan(t[i]) || std::isnan(y[i])) continue;
    yy.push_back(y[i]);
    tt.push_back(t[i]);
    ww.push_back(weights.weights[i]);
  }
  double wy1 = 0.0, w1 = 0.0, wy0 = 0.0, w0 = 0.0;
  for (std::size_t i = 0; i < yy.size(); ++i) {
    if (tt[i] == 1.0) {
      wy1 += ww[i] * yy[i];
      w1 += ww[i];
    } else {
      wy0 += ww[i] * yy[i];
      w0 += ww[i];
    }
  }
  if (w1 == 0.0 || w0 == 0.0) fail(ErrorKind::Statistical, errc::empty_group, "treated and control groups must both be nonempty");

  EffectRecord r;
  r.method = EffectMethod::IPW;
  r.ate = wy1 / w1 - wy0 / w0;
  r.n_boot = n_boot;
  r.seed = seed;
  std::tie(r.ci_low, r.ci_high) = percentile_ci(kernels::parallel::bootstrap_hajek(yy, tt, ww, n_boot, seed), r.ate);
  return r;
}

double default_threshold(std::span<const double> values) { return mean_of(values); }

std::string SubgroupKeyPart::label() const {
  if (binary) return variable + (high ? "=1" : "=0");
  std::ostringstream os;
  os << variable << (high ? " >= " : " < ") << threshold;
  return os.str();
}

Dataset pair_covariates(const MatchResult& result, const Dataset& ds) {
  std::vector<std::size_t> rows;
  rows.reserve(result.pairs.size());
  for (const auto& p : result.pairs) {
    const auto pos = ds.position_of(p.treated);
    if (!pos) fail(ErrorKind::Validation, errc::stale_ids, "pair references unknown row id " + std::to_string(p.treated));
    rows.push_back(*pos);
  }
  std::vector<Column> cols;
  for (const auto& src : ds.columns()) {
    Column c;
    c.name = src.name;
    c.kind = src.kind;
    for (auto r : rows) {
      if (!src.numbers.empty()) c.numbers.push_back(src.numbers[r]);
      if (!src.labels.empty()) c.labels.push_back(src.labels[r]);
    }
    cols.push_back(std::move(c));
  }
  std::vector<RowId> ids(rows.size());
  std::iota(ids.begin(), ids.end(), RowId{0});
  return Dataset(std::move(cols), std::move(ids));
}

SubgroupTable facet(std::span<const double> ites, const Dataset& pair_data, const SubgroupSpec& spec) {
  if (spec.variables.size() > kMaxFacetVariables) {
    fail(ErrorKind::Validation, errc::too_many_variables, "at most three subgroup variables");
  }
  if (ites.empty()) fail(ErrorKind::Validation, errc::empty_input, "no individual effects to facet");
  if (pair_data.n_rows() != ites.size()) {
    fail(ErrorKind::Validation, errc::length_mismatch, "pair covariates do not align with the effects");
  }
  for (const auto& [name, value] : spec.thresholds) {
    if (std::find(spec.variables.begin(), spec.variables.end(), name) == spec.variables.end()) {
      fail(ErrorKind::Validation, errc::unknown_variable, "threshold given for unselected variable " + name);
    }
    if (!std::isfinite(value)) fail(ErrorKind::Validation, errc::bad_request, "threshold for " + name + " is not finite");
  }

  SubgroupTable table;
  table.variables = spec.variables;
  table.n = ites.size();

  std::vector<Split> splits;
  std::set<std::string> seen;
  for (const auto& name : spec.variables) {
    if (!seen.insert(name).second) fail(ErrorKind::Validation, errc::bad_request, "variable " + name + " selected twice");
    if (!pair_data.has_column(name)) fail(ErrorKind::Validation, errc::unknown_variable, "unknown variable " + name);
    const Column& c = pair_data.column(name);
    if (!c.is_numeric()) {
      fail(ErrorKind::Validation, errc::not_numeric, "variable " + name + " is categorical; one-hot encode it first");
    }
    Split s;
    s.variable = name;
    s.values = pair_data.numeric(name);
    for (double v : s.values) {
      if (std::isnan(v)) fail(ErrorKind::Validation, errc::bad_request, "variable " + name + " has missing values");
    }
    s.binary = c.kind == ColumnKind::Binary;
    if (!s.binary) {
      const auto it = spec.thresholds.find(name);
      s.threshold = it != spec.thresholds.end() ? it->second : default_threshold(s.values);
      table.thresholds[name] = s.threshold;
    }
    splits.push_back(s);
  }

  // Cell index: bit (k-1-v) set when the unit sits on the high side of
  // variable v, so ascending indices run in lexicographic key order.
  const std::size_t k = splits.size();
  const std::size_t n_cells = std::size_t{1} << k;
  std::vector<std::vector<double>> members(n_cells);
  for (std::size_t i = 0; i < ites.size(); ++i) {
    std::size_t cell = 0;
    for (std::size_t v = 0; v < k; ++v) {
      const double x = splits[v].values[i];
      const bool high = splits[v].binary ? x == 1.0 : x >= splits[v].threshold;
      if (high) cell |= std::size_t{1} << (k - 1 - v);
    }
    members[cell].push_back(ites[i]);
  }

  const auto [mn, mx] = std::minmax_element(ites.begin(), ites.end());
  table.axis_low = *mn;
  table.axis_high = *mx;
  table.zero_in_axis = table.axis_low <= 0.0 && table.axis_high >= 0.0;
  table.overall_mean = std::accumulate(ites.begin(), ites.end(), 0.0) / static_cast<double>(ites.size());

  double range = table.axis_high - table.axis_low;
  if (!(range > 0.0)) range = std::max(std::abs(table.overall_mean), 1.0);
  const double floor_h = range / 60.0;

  table.cells.resize(n_cells);
  double h_max = 0.0;
  for (std::size_t c = 0; c < n_cells; ++c) {
    SubgroupCell& cell = table.cells[c];
    for (std::size_t v = 0; v < k; ++v) {
      const bool high = (c >> (k - 1 - v)) & 1U;
      cell.key.push_back({splits[v].variable, splits[v].binary, high, splits[v].threshold});
    }
    cell.values = members[c];
    cell.n = cell.values.size();
    if (cell.n == 0) {
      cell.mean = cell.median = cell.q1 = cell.q3 = cell.whisker_low = cell.whisker_high = cell.bandwidth = kNaN;
      continue;
    }
    std::vector<double> sorted = cell.values;
    std::sort(sorted.begin(), sorted.end());
    cell.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(cell.n);
    cell.median = quantile_sorted(sorted, 0.5);
    cell.q1 = quantile_sorted(sorted, 0.25);
    cell.q3 = quantile_sorted(sorted, 0.75);
    const double reach = 1.5 * (cell.q3 - cell.q1);
    cell.whisker_low = *std::lower_bound(sorted.begin(), sorted.end(), cell.q1 - reach);
    cell.whisker_high = *(std::upper_bound(sorted.begin(), sorted.end(), cell.q3 + reach) - 1);
    cell.bandwidth = std::max(silverman(sorted), floor_h);
    h_max = std::max(h_max, cell.bandwidth);
  }

  // Shared grid wide enough that every cell's density has negligible mass
  // outside it; bandwidths never drop below the grid spacing.
  const double g_lo = table.axis_low - 6.0 * h_max;
  const double g_hi = table.axis_high + 6.0 * h_max;
  const double step = (g_hi - g_lo) / static_cast<double>(kKdeGridPoints - 1);
  table.grid.resize(kKdeGridPoints);
  for (std::size_t g = 0; g < kKdeGridPoints; ++g) table.grid[g] = g_lo + step * static_cast<double>(g);
  table.grid.back() = g_hi;

  bool any_pos = false, any_neg = false;
  for (auto& cell : table.cells) {
    if (cell.n == 0) continue;
    cell.bandwidth = std::max(cell.bandwidth, step);
    cell.density = kernels::parallel::gaussian_kde(cell.values, cell.bandwidth, table.grid);
    any_pos = any_pos || cell.mean > 0.0;
    any_neg = any_neg || cell.mean < 0.0;
  }
  table.sign_flip_overall = any_pos && any_neg;
  return table;
}

json effect_to_json(const EffectRecord& record) {
  json doc{{"method", record.method == EffectMethod::Matched ? "matched" : "ipw"},
           {"ate", record.ate},
           {"ci", json::array({record.ci_low, record.ci_high})},
           {"n_boot", record.n_boot},
           {"seed", record.seed}};
  if (record.method == EffectMethod::Matched) doc["ites"] = record.ites;
  return doc;
}

json subgroup_table_to_json(const SubgroupTable& table) {
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  json cells = json::array();
  for (const auto& c : table.cells) {
    json key = json::array();
    std::string label;
    for (const auto& part : c.key) {
      json p{{"variable", part.variable}, {"side", part.high ? "high" : "low"}};
      if (!part.binary) p["threshold"] = part.threshold;
      key.push_back(std::move(p));
      if (!label.empty()) label += ", ";
      label += part.label();
    }
    cells.push_back({{"key", std::move(key)},
                     {"label", label.empty() ? std::string("all") : label},
                     {"n", c.n},
                     {"mean", num(c.mean)},
                     {"median", num(c.median)},
                     {"q1", num(c.q1)},
                     {"q3", num(c.q3)},
                     {"whisker_low", num(c.whisker_low)},
                     {"whisker_high", num(c.whisker_high)},
                     {"bandwidth", num(c.bandwidth)},
                     {"density", c.density},
                     {"values", c.values}});
  }
  json thresholds = json::object();
  for (const auto& [name, value] : table.thresholds) thresholds[name] = value;
  return json{{"variables", table.variables},
              {"thresholds", std::move(thresholds)},
              {"n", table.n},
              {"overall_mean", table.overall_mean},
              {"axis", json::array({table.axis_low, table.axis_high})},
              {"zero_in_axis", table.zero_in_axis},
              {"grid", table.grid},
              {"cells", std::move(cells)},
              {"sign_flip_overall", table.sign_flip_overall}};
}

}  // namespace cwb
