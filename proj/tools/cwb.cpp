// cwb: batch front end for the causal workbench engine.

#include <cmath>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "cwb/balance.hpp"
#include "cwb/dag.hpp"
#include "cwb/dataset.hpp"
#include "cwb/effects.hpp"
#include "cwb/matching.hpp"
#include "cwb/propensity.hpp"
#include "cwb/provenance.hpp"
#include "cwb/service.hpp"

namespace {

using namespace cwb;

struct DataArgs {
  std::string path;
  std::vector<std::string> one_hot;
  std::vector<std::string> binarize;   // col:mode[:value]
  std::vector<std::string> overrides;  // col=kind

  void add_to(CLI::App& cmd, bool required) {
    auto* opt = cmd.add_option("--data", path, "CSV file");
    if (required) opt->required();
    cmd.add_option("--one-hot", one_hot, "one-hot encode these columns (or 'all')")->delimiter(',');
    cmd.add_option("--binarize", binarize, "binarize a column: col:median|mean|value[:v]");
    cmd.add_option("--override", overrides, "force a column kind: col=binary|continuous|categorical");
  }

  json source() const {
    json prep = json::object();
    json bins = json::array();
    for (const auto& spec : binarize) {
      std::vector<std::string> parts;
      std::stringstream ss(spec);
      for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
      if (parts.size() < 2 || parts.size() > 3) {
        fail(ErrorKind::Validation, errc::bad_request, "--binarize expects col:mode[:value], got " + spec);
      }
      json b{{"column", parts[0]}, {"mode", parts[1]}};
      if (parts.size() == 3) {
        try {
          b["value"] = std::stod(parts[2]);
        } catch (const std::exception&) {
          fail(ErrorKind::Validation, errc::bad_request, "bad threshold in --binarize " + spec);
        }
      }
      bins.push_back(std::move(b));
    }
    if (!bins.empty()) prep["binarize"] = std::move(bins);
    if (one_hot.size() == 1 && one_hot[0] == "all") {
      prep["one_hot"] = "all";
    } else if (!one_hot.empty()) {
      prep["one_hot"] = one_hot;
    }
    json ov = json::object();
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) fail(ErrorKind::Validation, errc::bad_request, "--override expects col=kind");
      ov[o.substr(0, eq)] = o.substr(eq + 1);
    }
    std::error_code ec;
    auto abs = std::filesystem::absolute(path, ec);
    return json{{"path", ec ? path : abs.lexically_normal().string()}, {"overrides", ov}, {"prep", prep}};
  }
};

Dataset load_source(const json& source) {
  CsvOptions opts;
  for (const auto& [col, kind] : source.value("overrides", json::object()).items()) {
    opts.typing_overrides[col] = column_kind_from_string(kind.get<std::string>());
  }
  return apply_prep(load_csv_file(source.at("path").get<std::string>(), opts), source.value("prep", json()));
}

void emit(const json& doc, const std::string& out) {
  const std::string text = doc.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text_file(out, text);
  }
}

json numbers_or_null(std::span<const double> v) {
  json a = json::array();
  for (double x : v) a.push_back(std::isnan(x) ? json(nullptr) : json(x));
  return a;
}

std::vector<double> numbers_from(const json& a) {
  std::vector<double> v;
  for (const auto& x : a) v.push_back(x.is_null() ? std::nan("") : x.get<double>());
  return v;
}

// Covariates from --covariates, else the confounders and prognostic factors
// of --dag; names expand to their one-hot columns.
std::vector<std::string> covariate_columns(const Dataset& ds, const std::vector<std::string>& given,
                                           const std::string& dag_path) {
  std::vector<std::string> names = given;
  if (names.empty()) {
    if (dag_path.empty()) fail(ErrorKind::Validation, errc::bad_request, "give --covariates or --dag");
    const auto cls = classify(dag_from_json(read_json_file(dag_path)));
    names = cls.confounders;
    names.insert(names.end(), cls.prognostics.begin(), cls.prognostics.end());
  }
  return resolve_columns(ds, names);
}

std::string role_or(const std::string& given, const std::string& dag_path, bool treatment) {
  if (!given.empty()) return given;
  if (!dag_path.empty()) {
    const CausalDag dag = dag_from_json(read_json_file(dag_path));
    const auto& r = treatment ? dag.treatment() : dag.outcome();
    if (r) return *r;
  }
  fail(ErrorKind::Validation, errc::bad_request, treatment ? "give --treatment" : "give --outcome");
}

// Scores from a propensity output document, checked against the dataset rows.
std::vector<double> scores_from(const json& doc, const Dataset& ds) {
  const auto ids = detail::require(doc, "row_ids", "propensity output").get<std::vector<RowId>>();
  if (ids != ds.row_ids()) fail(ErrorKind::Validation, errc::stale_ids, "scores were computed on different rows");
  return numbers_from(detail::require(doc, "scores", "propensity output"));
}

WeightVector weights_from_file(const std::string& path) {
  const json doc = read_json_file(path);
  // A propensity output embeds its weights.
  if (doc.is_object() && doc.contains("weights") && doc.contains("scores")) return weights_from_json(doc["weights"]);
  return weights_from_json(doc);
}

std::map<std::string, double> parse_thresholds(const std::vector<std::string>& items) {
  std::map<std::string, double> out;
  for (const auto& kv : items) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) fail(ErrorKind::Validation, errc::bad_request, "--threshold expects name=value");
    try {
      out[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
    } catch (const std::exception&) {
      fail(ErrorKind::Validation, errc::bad_request, "bad threshold value in " + kv);
    }
  }
  return out;
}

int exit_code(const Error& e) { return e.kind() == ErrorKind::Io ? 2 : 1; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal workbench: DAG classification, propensity, balance, matching, effects, versions"};
  app.require_subcommand(1);

  std::string out, dag_path, treatment, outcome, weights_path, adjusted, metric = "propensity", match_path, scores_path;
  std::string versions_path, notes, timestamp, sort_key, method = "matched", ids_path;
  std::vector<std::string> covariates, facet_vars, thresholds;
  std::optional<double> caliper, ate_value;
  std::optional<std::size_t> bins;
  std::uint64_t seed = kDefaultSeed;
  std::size_t n_boot = kDefaultBootstrap;
  double lambda = FitOptions{}.lambda;
  bool stabilized = false, with_replacement = false, print_config = false;
  DataArgs data;

  auto* classify_cmd = app.add_subcommand("classify", "classify DAG variables relative to treatment and outcome");
  classify_cmd->add_option("--dag", dag_path, "DAG JSON")->required();
  classify_cmd->add_option("--out", out);

  auto* ps_cmd = app.add_subcommand("propensity", "fit a propensity model and score every row");
  data.add_to(*ps_cmd, true);
  ps_cmd->add_option("--treatment", treatment);
  ps_cmd->add_option("--covariates", covariates)->delimiter(',');
  ps_cmd->add_option("--dag", dag_path, "DAG supplying roles and covariates");
  ps_cmd->add_option("--lambda", lambda, "ridge penalty on standardized coefficients");
  ps_cmd->add_flag("--stabilized", stabilized, "stabilized IPW weights");
  ps_cmd->add_option("--bins", bins, "also emit a mirrored score histogram");
  ps_cmd->add_option("--out", out);

  auto* bal_cmd = app.add_subcommand("balance", "aSMD balance report");
  data.add_to(*bal_cmd, true);
  bal_cmd->add_option("--treatment", treatment);
  bal_cmd->add_option("--covariates", covariates)->delimiter(',');
  bal_cmd->add_option("--dag", dag_path);
  bal_cmd->add_option("--adjusted", adjusted, "adjusted cohort: CSV, or a match result JSON");
  bal_cmd->add_option("--weights", weights_path, "weights JSON (or propensity output)");
  bal_cmd->add_option("--sort", sort_key, "adjusted|unadjusted|name, descending");
  bal_cmd->add_option("--out", out);

  auto* match_cmd = app.add_subcommand("match", "greedy 1:1 nearest-neighbour matching");
  data.add_to(*match_cmd, true);
  match_cmd->add_option("--treatment", treatment);
  match_cmd->add_option("--covariates", covariates)->delimiter(',');
  match_cmd->add_option("--dag", dag_path);
  match_cmd->add_option("--scores", scores_path, "propensity output JSON; fitted on the fly when absent");
  match_cmd->add_option("--metric", metric, "propensity|logit|mahalanobis");
  match_cmd->add_option("--caliper", caliper);
  match_cmd->add_flag("--with-replacement", with_replacement);
  match_cmd->add_option("--out", out);

  auto* eff_cmd = app.add_subcommand("effects", "treatment effects and subgroup faceting");
  data.add_to(*eff_cmd, false);
  eff_cmd->add_option("--match", match_path, "match result JSON");
  eff_cmd->add_option("--outcome", outcome);
  eff_cmd->add_option("--treatment", treatment);
  eff_cmd->add_option("--dag", dag_path);
  eff_cmd->add_option("--method", method, "matched|ipw");
  eff_cmd->add_option("--weights", weights_path, "weights JSON for --method ipw");
  eff_cmd->add_option("--facet", facet_vars, "up to three subgroup variables")->delimiter(',');
  eff_cmd->add_option("--threshold", thresholds, "name=value split point");
  eff_cmd->add_option("--seed", seed, "bootstrap seed");
  eff_cmd->add_option("--n-boot", n_boot);
  eff_cmd->add_option("--out", out);

  auto* ver_cmd = app.add_subcommand("versions", "append a (DAG, cohort, ATE) version to a versions file");
  ver_cmd->add_option("--file", versions_path, "versions JSON, created when missing")->required();
  ver_cmd->add_option("--dag", dag_path)->required();
  ver_cmd->add_option("--match", match_path, "cohort = matched units");
  ver_cmd->add_option("--ids", ids_path, "cohort = JSON array of row ids");
  ver_cmd->add_option("--ate", ate_value);
  ver_cmd->add_option("--outcome", outcome, "compute the matched ATE from --match");
  ver_cmd->add_option("--notes", notes);
  ver_cmd->add_option("--timestamp", timestamp, "fixed timestamp instead of the current time");
  ver_cmd->add_option("--out", out);

  std::string host = "127.0.0.1";
  int port = 8787;
  std::string state_dir;
  std::size_t max_upload_mb = 64;
  if (const char* p = std::getenv("PORT")) port = std::atoi(p);
  if (const char* d = std::getenv("STATE_DIR")) state_dir = d;
  if (const char* m = std::getenv("MAX_UPLOAD_MB")) max_upload_mb = static_cast<std::size_t>(std::atoll(m));
  auto* serve_cmd = app.add_subcommand("serve", "start the HTTP service");
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--port", port);
  serve_cmd->add_option("--state-dir", state_dir);
  serve_cmd->add_option("--max-upload-mb", max_upload_mb);
  serve_cmd->add_flag("--print-config", print_config, "print the resolved configuration and exit");

  // Accepted everywhere so scripted runs can pass one seed uniformly; only
  // the bootstrap in `effects` draws random numbers.
  for (auto* cmd : {classify_cmd, ps_cmd, bal_cmd, match_cmd, ver_cmd, serve_cmd}) {
    cmd->add_option("--seed", seed, "random seed (unused by this subcommand)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*classify_cmd) {
      emit(classification_to_json(classify(dag_from_json(read_json_file(dag_path)))), out);

    } else if (*ps_cmd) {
      const Dataset ds = load_source(data.source());
      const std::string t = role_or(treatment, dag_path, true);
      const auto covs = covariate_columns(ds, covariates, dag_path);
      FitOptions opts;
      opts.lambda = lambda;
      const PropensityModel model = fit_propensity(ds, covs, t, opts);
      const auto scores = predict(model, ds);
      const auto tv = ds.numeric(t);
      // Unscorable rows keep a placeholder weight of 1; every weighted
      // estimate drops them again through its complete-case filter.
      std::vector<double> s, tt;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        if (std::isnan(scores[i]) || std::isnan(tv[i])) continue;
        s.push_back(scores[i]);
        tt.push_back(tv[i]);
      }
      const WeightVector partial = ipw_weights(s, tt, stabilized);
      WeightVector w;
      w.stabilized = stabilized;
      for (std::size_t i = 0, k = 0; i < scores.size(); ++i) {
        const bool ok = !std::isnan(scores[i]) && !std::isnan(tv[i]);
        w.weights.push_back(ok ? partial.weights[k++] : 1.0);
      }
      json doc{{"treatment", t},
               {"model", model_to_json(model)},
               {"row_ids", ds.row_ids()},
               {"scores", numbers_or_null(scores)},
               {"weights", weights_to_json(w)}};
      if (bins) doc["histogram"] = histogram_to_json(propensity_histogram(s, tt, *bins));
      emit(doc, out);

    } else if (*bal_cmd) {
      const Dataset ds = load_source(data.source());
      const std::string t = role_or(treatment, dag_path, true);
      const auto covs = covariate_columns(ds, covariates, dag_path);
      std::optional<Dataset> cohort;
      std::optional<WeightVector> w;
      if (!adjusted.empty()) {
        if (adjusted.ends_with(".json")) {
          cohort = matched_cohort(ds, match_from_json(read_json_file(adjusted)));
        } else {
          DataArgs adj = data;
          adj.path = adjusted;
          cohort = load_source(adj.source());
        }
      }
      if (!weights_path.empty()) w = weights_from_file(weights_path);
      BalanceReport report = balance_report(ds, covs, t, cohort ? &*cohort : nullptr, w ? &*w : nullptr);
      if (!sort_key.empty()) report = sort_report(std::move(report), sort_key_from_string(sort_key), true);
      emit(report_to_json(report), out);

    } else if (*match_cmd) {
      const json source = data.source();
      const Dataset ds = load_source(source);
      const std::string t = role_or(treatment, dag_path, true);
      MatchSpec spec;
      spec.metric = match_metric_from_string(metric);
      spec.caliper = caliper;
      spec.with_replacement = with_replacement;
      std::vector<double> scores;
      if (!scores_path.empty()) {
        scores = scores_from(read_json_file(scores_path), ds);
      } else if (spec.metric != MatchMetric::Mahalanobis) {
        const auto covs = covariate_columns(ds, covariates, dag_path);
        scores = predict(fit_propensity(ds, covs, t), ds);
      }
      if (spec.metric == MatchMetric::Mahalanobis) spec.covariates = covariate_columns(ds, covariates, dag_path);
      json doc = match_to_json(match(ds, t, spec, scores));
      doc["source"] = source;
      doc["treatment"] = t;
      emit(doc, out);

    } else if (*eff_cmd) {
      json match_doc;
      if (!match_path.empty()) match_doc = read_json_file(match_path);
      Dataset ds;
      if (!data.path.empty()) {
        ds = load_source(data.source());
      } else if (match_doc.is_object() && match_doc.contains("source")) {
        ds = load_source(match_doc["source"]);
      } else {
        fail(ErrorKind::Validation, errc::bad_request, "give --data or a --match file that records its source");
      }
      const std::string y = role_or(outcome, dag_path, false);
      if (method == "ipw") {
        if (weights_path.empty()) fail(ErrorKind::Validation, errc::bad_request, "--method ipw needs --weights");
        std::string t = treatment;
        if (t.empty()) t = match_doc.is_object() && match_doc.contains("treatment") ? match_doc["treatment"].get<std::string>()
                                                                                   : role_or("", dag_path, true);
        emit(effect_to_json(ate_ipw(ds, t, y, weights_from_file(weights_path), n_boot, seed)), out);
      } else if (method == "matched") {
        if (match_path.empty()) fail(ErrorKind::Validation, errc::bad_request, "--method matched needs --match");
        const MatchResult m = match_from_json(match_doc);
        const auto ites = pair_effects(m, ds, y);
        if (!facet_vars.empty() || !thresholds.empty()) {
          SubgroupSpec spec{facet_vars, parse_thresholds(thresholds)};
          emit(subgroup_table_to_json(facet(ites, pair_covariates(m, ds), spec)), out);
        } else {
          emit(effect_to_json(ate_matched(ites, n_boot, seed)), out);
        }
      } else {
        fail(ErrorKind::Validation, errc::bad_request, "--method must be matched or ipw");
      }

    } else if (*ver_cmd) {
      VersionTree tree;
      if (std::filesystem::exists(versions_path)) tree = load_versions(read_json_file(versions_path));
      const json dag_doc = read_json_file(dag_path);
      std::vector<RowId> ids;
      std::optional<MatchResult> m;
      json match_doc;
      if (!match_path.empty()) {
        match_doc = read_json_file(match_path);
        m = match_from_json(match_doc);
        for (const auto& p : m->pairs) {
          ids.push_back(p.treated);
          ids.push_back(p.control);
        }
      } else if (!ids_path.empty()) {
        ids = read_json_file(ids_path).get<std::vector<RowId>>();
      } else {
        fail(ErrorKind::Validation, errc::bad_request, "give --match or --ids for the cohort");
      }
      double ate = 0.0;
      if (ate_value) {
        ate = *ate_value;
      } else if (m && !outcome.empty() && match_doc.contains("source")) {
        ate = ate_matched(pair_effects(*m, load_source(match_doc["source"]), outcome), 0).ate;
      } else {
        fail(ErrorKind::Validation, errc::bad_request, "give --ate, or --match with --outcome");
      }
      tree = add_version(std::move(tree), dag_doc, ids, ate, timestamp, notes);
      write_text_file(versions_path, save_versions(tree).dump(2) + "\n");
      // The appended entry, without its wall-clock timestamp.
      const auto& series = ate_series(tree);
      const auto& [label, value] = series.back();
      json entry{{"label", label}, {"ate", value}, {"n_versions", series.size()}, {"n_dags", tree.dag_versions.size()}};
      for (const auto& d : tree.dag_versions) {
        for (const auto& c : d.cohorts) {
          if (c.label == label) {
            entry["dag_label"] = d.label;
            entry["dag_hash"] = d.hash;
            entry["fingerprint"] = c.fingerprint;
            entry["n"] = c.n;
          }
        }
      }
      emit(entry, out);

    } else if (*serve_cmd) {
      ServiceConfig cfg;
      if (!state_dir.empty()) cfg.state_dir = state_dir;
      cfg.max_upload_bytes = max_upload_mb << 20;
      if (print_config) {
        emit(json{{"host", host},
                  {"port", port},
                  {"state_dir", state_dir.empty() ? json(nullptr) : json(state_dir)},
                  {"max_upload_mb", max_upload_mb},
                  {"idle_ttl_s", cfg.idle_ttl.count()}},
             "");
        return 0;
      }
      Service service(cfg);
      HttpServer server(service);
      std::cerr << "cwb serving on http://" << host << ":" << port << "\n";
      server.run(host, port);
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error [" << e.code() << "]: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
