#include "cwb/balance.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <map>

namespace cwb {

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments weighted_moments(std::span<const double> x, std::span<const double> w, ColumnKind kind) {
  const bool uniform = w.empty();
  double sw = 0.0, swx = 0.0, sww = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double wi = uniform ? 1.0 : w[i];
    sw += wi;
    swx += wi * x[i];
    sww += wi * wi;
  }
  Moments m;
  m.mean = swx / sw;
  if (kind == ColumnKind::Binary) {
    m.var = m.mean * (1.0 - m.mean);
    return m;
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - m.mean;
    ss += (uniform ? 1.0 : w[i]) * d * d;
  }
  const double denom = sw - sww / sw;
  m.var = denom > 0.0 ? ss / denom : 0.0;
  return m;
}

void check_weights(std::span<const double> values, std::span<const double> weights) {
  if (weights.empty()) return;
  if (weights.size() != values.size()) fail(ErrorKind::Validation, errc::length_mismatch, "weights and values differ in length");
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) fail(ErrorKind::Validation, errc::non_positive_weight, "weights must be positive and finite");
  }
}

struct Split {
  std::vector<double> treated, control, w_treated, w_control;
};

// Splits one covariate by treatment arm, carrying optional per-row weights.
Split split_by_arm(std::span<const double> x, std::span<const double> t, std::span<const double> w) {
  Split s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (t[i] == 1.0) {
      s.treated.push_back(x[i]);
      if (!w.empty()) s.w_treated.push_back(w[i]);
    } else {
      s.control.push_back(x[i]);
      if (!w.empty()) s.w_control.push_back(w[i]);
    }
  }
  return s;
}

std::string_view mode_name(AdjustmentMode m) {
  return m == AdjustmentMode::CohortAdjusted ? "cohort_adjusted" : "weight_adjusted";
}

double ess(std::span<const double> w) {
  double s = 0.0, ss = 0.0;
  for (double v : w) {
    s += v;
    ss += v * v;
  }
  return ss > 0.0 ? s * s / ss : 0.0;
}

void require_binary_treatment(const Dataset& ds, std::string_view treatment) {
  const Column& c = ds.column(treatment);
  if (c.kind != ColumnKind::Binary) {
    fail(ErrorKind::Validation, errc::schema_error, "treatment column " + c.name + " must be binary");
  }
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_optional(const json& v) {
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

}  // namespace

std::optional<double> smd(std::span<const double> treated, std::span<const double> control, ColumnKind kind,
                          std::span<const double> treated_weights, std::span<const double> control_weights) {
  if (treated.empty() || control.empty()) fail(ErrorKind::Statistical, errc::empty_group, "both groups must be nonempty");
  if (kind == ColumnKind::Categorical) fail(ErrorKind::Validation, errc::not_numeric, "aSMD needs a numeric covariate");
  check_weights(treated, treated_weights);
  check_weights(control, control_weights);
  const Moments mt = weighted_moments(treated, treated_weights, kind);
  const Moments mc = weighted_moments(control, control_weights, kind);
  const double gap = std::abs(mt.mean - mc.mean);
  const double pooled = 0.5 * (mt.var + mc.var);
  if (!(pooled > 0.0)) {
    if (gap == 0.0) return 0.0;
    return std::nullopt;
  }
  return gap / std::sqrt(pooled);
}

bool is_flagged(const std::optional<double>& adjusted) { return !adjusted || *adjusted > kBalanceThreshold; }

BalanceReport balance_report(const Dataset& unadjusted, std::span<const std::string> covariates,
                             std::string_view treatment, const Dataset* adjusted, const WeightVector* weights) {
  if (adjusted != nullptr && weights != nullptr) {
    fail(ErrorKind::Validation, errc::both_adjustments_given, "pass an adjusted cohort or weights, not both");
  }
  require_binary_treatment(unadjusted, treatment);
  if (adjusted != nullptr) require_binary_treatment(*adjusted, treatment);
  for (const auto& c : covariates) {
    if (!unadjusted.has_column(c) || (adjusted != nullptr && !adjusted->has_column(c))) {
      fail(ErrorKind::Validation, errc::missing_covariate, "covariate " + c + " is missing");
    }
    if (!unadjusted.column(c).is_numeric() || (adjusted != nullptr && !adjusted->column(c).is_numeric())) {
      fail(ErrorKind::Validation, errc::not_numeric, "covariate " + c + " is categorical; one-hot encode it first");
    }
  }
  if (weights != nullptr) {
    if (weights->weights.size() != unadjusted.n_rows()) {
      fail(ErrorKind::Validation, errc::length_mismatch, "weights do not align with the unadjusted rows");
    }
    check_weights(weights->weights, weights->weights);
  }

  std::vector<std::string> used(covariates.begin(), covariates.end());
  used.emplace_back(treatment);

  // Complete-case filtering; weights follow their rows.
  auto base = complete_cases(unadjusted, used);
  std::vector<double> w;
  if (weights != nullptr) {
    w.reserve(base.data.n_rows());
    for (RowId id : base.data.row_ids()) w.push_back(weights->weights[*unadjusted.position_of(id)]);
  }
  std::optional<CompleteCases> adj;
  if (adjusted != nullptr) adj = complete_cases(*adjusted, used);

  const Dataset& u = base.data;
  const Dataset& a = adj ? adj->data : u;
  const auto tu = u.numeric(treatment);
  const auto ta = a.numeric(treatment);

  BalanceReport report;
  report.mode = weights != nullptr ? AdjustmentMode::WeightAdjusted : AdjustmentMode::CohortAdjusted;
  report.n_dropped = base.n_dropped + (adj ? adj->n_dropped : 0);
  report.unadjusted_n_treated = static_cast<std::size_t>(std::count(tu.begin(), tu.end(), 1.0));
  report.unadjusted_n_control = u.n_rows() - report.unadjusted_n_treated;
  report.n_treated = static_cast<std::size_t>(std::count(ta.begin(), ta.end(), 1.0));
  report.n_control = a.n_rows() - report.n_treated;
  if (report.unadjusted_n_treated == 0 || report.unadjusted_n_control == 0 || report.n_treated == 0 ||
      report.n_control == 0) {
    fail(ErrorKind::Statistical, errc::empty_group, "treated and control groups must both be nonempty");
  }
  if (weights != nullptr) {
    const Split ws = split_by_arm(tu, tu, w);
    report.ess_treated = ess(ws.w_treated);
    report.ess_control = ess(ws.w_control);
  } else {
    report.ess_treated = static_cast<double>(report.n_treated);
    report.ess_control = static_cast<double>(report.n_control);
  }

  report.covariates.resize(covariates.size());
  const auto nc = static_cast<std::int64_t>(covariates.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t j = 0; j < nc; ++j) {
    try {
      const std::string& name = covariates[static_cast<std::size_t>(j)];
      const ColumnKind kind = u.column(name).kind;
      const Split su = split_by_arm(u.numeric(name), tu, {});
      CovariateBalance row;
      row.name = name;
      row.unadjusted = smd(su.treated, su.control, kind);
      if (weights != nullptr) {
        const Split sw = split_by_arm(u.numeric(name), tu, w);
        row.adjusted = smd(sw.treated, sw.control, kind, sw.w_treated, sw.w_control);
      } else if (adj) {
        const Split sa = split_by_arm(a.numeric(name), ta, {});
        row.adjusted = smd(sa.treated, sa.control, a.column(name).kind);
      } else {
        row.adjusted = row.unadjusted;
      }
      row.flagged = is_flagged(row.adjusted);
      report.covariates[static_cast<std::size_t>(j)] = std::move(row);
    } catch (...) {
#pragma omp critical(cwb_balance_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return report;
}

std::vector<CovariateDetail> details_view(const BalanceReport& report, const Dataset& unadjusted,
                                          std::string_view treatment, const Dataset* adjusted,
                                          const WeightVector* weights, std::optional<std::vector<std::string>> show) {
  if (adjusted != nullptr && weights != nullptr) {
    fail(ErrorKind::Validation, errc::both_adjustments_given, "pass an adjusted cohort or weights, not both");
  }
  std::map<std::string, const CovariateBalance*> by_name;
  for (const auto& c : report.covariates) by_name[c.name] = &c;

  std::vector<std::string> names;
  if (show) {
    for (const auto& s : *show) {
      if (!by_name.contains(s)) fail(ErrorKind::Validation, errc::unknown_covariate, "covariate " + s + " is not in the report");
    }
    names = *show;
  } else {
    for (const auto& c : sort_report(report, SortKey::Adjusted, true).covariates) {
      if (c.flagged) names.push_back(c.name);
    }
  }

  std::vector<std::string> used;
  for (const auto& c : report.covariates) used.push_back(c.name);
  used.emplace_back(treatment);
  auto base = complete_cases(unadjusted, used);
  std::vector<double> w;
  if (weights != nullptr) {
    if (weights->weights.size() != unadjusted.n_rows()) {
      fail(ErrorKind::Validation, errc::length_mismatch, "weights do not align with the unadjusted rows");
    }
    for (RowId id : base.data.row_ids()) w.push_back(weights->weights[*unadjusted.position_of(id)]);
  }
  std::optional<CompleteCases> adj;
  if (adjusted != nullptr) adj = complete_cases(*adjusted, used);
  const Dataset& u = base.data;
  const Dataset& a = adj ? adj->data : u;
  const auto tu = u.numeric(treatment);
  const auto ta = a.numeric(treatment);

  std::vector<CovariateDetail> out;
  for (const auto& name : names) {
    const auto xu = u.numeric(name);
    const auto xa = a.numeric(name);
    CovariateDetail d;
    d.name = name;
    d.adjusted_asmd = by_name[name]->adjusted;
    d.flagged = by_name[name]->flagged;

    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (double v : xu) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (!(hi > lo)) {
      lo -= 0.5;
      hi += 0.5;
    }
    d.edges.resize(kDetailBins + 1);
    for (std::size_t k = 0; k <= kDetailBins; ++k) {
      d.edges[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(kDetailBins);
    }
    auto bin_of = [&](double v) {
      auto k = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(kDetailBins));
      return std::min(k, kDetailBins - 1);
    };
    d.unadjusted_treated.assign(kDetailBins, 0.0);
    d.unadjusted_control.assign(kDetailBins, 0.0);
    d.adjusted_treated.assign(kDetailBins, 0.0);
    d.adjusted_control.assign(kDetailBins, 0.0);

    double st = 0, sc = 0, nt = 0, ncn = 0;
    for (std::size_t i = 0; i < xu.size(); ++i) {
      const bool t = tu[i] == 1.0;
      (t ? d.unadjusted_treated : d.unadjusted_control)[bin_of(xu[i])] += 1.0;
      (t ? st : sc) += xu[i];
      (t ? nt : ncn) += 1.0;
    }
    d.unadjusted_mean_treated = st / nt;
    d.unadjusted_mean_control = sc / ncn;

    double ast = 0, asc = 0, ant = 0, anc = 0;
    for (std::size_t i = 0; i < xa.size(); ++i) {
      const bool t = ta[i] == 1.0;
      const double wi = w.empty() ? 1.0 : w[i];
      // Adjusted cohort rows can fall outside the unadjusted range only if the
      // caller passes an unrelated cohort; clamp them into the end bins.
      (t ? d.adjusted_treated : d.adjusted_control)[bin_of(std::clamp(xa[i], lo, hi))] += wi;
      (t ? ast : asc) += wi * xa[i];
      (t ? ant : anc) += wi;
    }
    d.adjusted_mean_treated = ant > 0 ? ast / ant : std::nan("");
    d.adjusted_mean_control = anc > 0 ? asc / anc : std::nan("");
    out.push_back(std::move(d));
  }
  return out;
}

SortKey sort_key_from_string(std::string_view text) {
  if (text == "adjusted") return SortKey::Adjusted;
  if (text == "unadjusted") return SortKey::Unadjusted;
  if (text == "name") return SortKey::Name;
  fail(ErrorKind::Validation, errc::bad_request, "unknown sort key: " + std::string(text));
}

BalanceReport sort_report(BalanceReport report, SortKey key, bool descending) {
  auto value = [key](const CovariateBalance& c) {
    const auto& v = key == SortKey::Adjusted ? c.adjusted : c.unadjusted;
    return v ? *v : std::numeric_limits<double>::infinity();
  };
  std::stable_sort(report.covariates.begin(), report.covariates.end(),
                   [&](const CovariateBalance& a, const CovariateBalance& b) {
                     if (key == SortKey::Name) return descending ? a.name > b.name : a.name < b.name;
                     const double va = value(a);
                     const double vb = value(b);
                     if (va != vb) return descending ? va > vb : va < vb;
                     return a.name < b.name;
                   });
  return report;
}

json report_to_json(const BalanceReport& report) {
  json covs = json::array();
  for (const auto& c : report.covariates) {
    covs.push_back({{"name", c.name},
                    {"unadjusted", optional_number(c.unadjusted)},
                    {"adjusted", optional_number(c.adjusted)},
                    {"flagged", c.flagged}});
  }
  return json{{"mode", std::string(mode_name(report.mode))},
              {"covariates", std::move(covs)},
              {"n_treated", report.n_treated},
              {"n_control", report.n_control},
              {"ess_treated", report.ess_treated},
              {"ess_control", report.ess_control},
              {"unadjusted_n_treated", report.unadjusted_n_treated},
              {"unadjusted_n_control", report.unadjusted_n_control},
              {"n_dropped", report.n_dropped},
              {"threshold", kBalanceThreshold}};
}

BalanceReport report_from_json(const json& doc) {
  try {
    BalanceReport r;
    const auto mode = detail::require(doc, "mode", "balance report").get<std::string>();
    if (mode == "cohort_adjusted") {
      r.mode = AdjustmentMode::CohortAdjusted;
    } else if (mode == "weight_adjusted") {
      r.mode = AdjustmentMode::WeightAdjusted;
    } else {
      fail(ErrorKind::Validation, errc::schema_error, "unknown balance mode " + mode);
    }
    for (const auto& c : detail::require(doc, "covariates", "balance report")) {
      CovariateBalance row;
      row.name = c.at("name").get<std::string>();
      row.unadjusted = read_optional(c.at("unadjusted"));
      row.adjusted = read_optional(c.at("adjusted"));
      row.flagged = c.at("flagged").get<bool>();
      r.covariates.push_back(std::move(row));
    }
    r.n_treated = doc.at("n_treated").get<std::size_t>();
    r.n_control = doc.at("n_control").get<std::size_t>();
    r.ess_treated = doc.at("ess_treated").get<double>();
    r.ess_control = doc.at("ess_control").get<double>();
    r.unadjusted_n_treated = doc.value("unadjusted_n_treated", std::size_t{0});
    r.unadjusted_n_control = doc.value("unadjusted_n_control", std::size_t{0});
    r.n_dropped = doc.value("n_dropped", std::size_t{0});
    return r;
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, errc::schema_error, std::string("balance report: ") + e.what());
  }
}

json details_to_json(const std::vector<CovariateDetail>& details) {
  json out = json::array();
  for (const auto& d : details) {
    out.push_back({{"name", d.name},
                   {"edges", d.edges},
                   {"unadjusted", {{"treated", d.unadjusted_treated}, {"control", d.unadjusted_control}}},
                   {"adjusted", {{"treated", d.adjusted_treated}, {"control", d.adjusted_control}}},
                   {"unadjusted_means", {{"treated", d.unadjusted_mean_treated}, {"control", d.unadjusted_mean_control}}},
                   {"adjusted_means", {{"treated", d.adjusted_mean_treated}, {"control", d.adjusted_mean_control}}},
                   {"adjusted_asmd", optional_number(d.adjusted_asmd)},
                   {"flagged", d.flagged}});
  }
  return out;
}

}  // namespace cwb
