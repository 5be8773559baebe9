#include "cwb/service.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "cwb/balance.hpp"
#include "cwb/dag.hpp"
#include "cwb/dataset.hpp"
#include "cwb/effects.hpp"
#include "cwb/matching.hpp"
#include "cwb/propensity.hpp"
#include "cwb/provenance.hpp"

// After Eigen: <resolv.h> defines a _res macro that breaks Eigen headers.
#include <httplib.h>

namespace cwb {

struct Service::Session {
  std::mutex mutex;
  std::uint64_t counter = 0;
  std::chrono::steady_clock::time_point last_used = std::chrono::steady_clock::now();

  std::optional<Dataset> dataset;
  CausalDag dag;
  std::optional<PropensityModel> model;
  std::string ps_treatment;
  std::vector<double> scores;  // aligned with dataset rows
  std::optional<WeightVector> weights;
  std::optional<MatchResult> match;
  std::string match_treatment;
  VersionTree versions;

  // Anything derived from the dataset goes stale with it.
  void reset_derived() {
    model.reset();
    ps_treatment.clear();
    scores.clear();
    weights.reset();
    match.reset();
    match_treatment.clear();
  }
};

namespace {

namespace fs = std::filesystem;

int status_for(const Error& e) {
  if (e.code() == errc::payload_too_large) return 413;
  switch (e.kind()) {
    case ErrorKind::Validation: return 400;
    case ErrorKind::NotFound: return 404;
    case ErrorKind::Conflict: return 409;
    case ErrorKind::Statistical: return 422;
    case ErrorKind::Io: return 500;
  }
  return 500;
}

std::string mint_id() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  std::ostringstream os;
  os << std::hex;
  for (int i = 0; i < 2; ++i) {
    os.width(16);
    os.fill('0');
    os << rng();
  }
  return os.str();
}

bool valid_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 &&
         std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-'; });
}

json numbers_or_null(std::span<const double> v) {
  json out = json::array();
  for (double x : v) out.push_back(std::isnan(x) ? json(nullptr) : json(x));
  return out;
}

std::vector<double> numbers_from(const json& arr) {
  std::vector<double> out;
  for (const auto& x : arr) out.push_back(x.is_null() ? std::nan("") : x.get<double>());
  return out;
}

// ---- request helpers --------------------------------------------------------

json body_json(const Request& r) {
  if (r.body.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
  json doc = parse_json(r.body);
  if (!doc.is_object()) fail(ErrorKind::Validation, errc::schema_error, "request body must be a JSON object");
  return doc;
}

std::string string_field(const json& body, const char* key) {
  const json& v = detail::require(body, key, "request");
  if (!v.is_string()) fail(ErrorKind::Validation, errc::schema_error, std::string(key) + " must be a string");
  return v.get<std::string>();
}

std::vector<std::string> strings_field(const json& body, const char* key) {
  try {
    return body.at(key).get<std::vector<std::string>>();
  } catch (const json::exception&) {
    fail(ErrorKind::Validation, errc::schema_error, std::string(key) + " must be an array of strings");
  }
}

template <class T>
T value_or(const json& body, const char* key, T fallback) {
  if (!body.contains(key) || body[key].is_null()) return fallback;
  try {
    return body[key].get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::Validation, errc::schema_error, std::string("bad value for ") + key);
  }
}

const Dataset& need_dataset(const Service::Session& s) {
  if (!s.dataset) fail(ErrorKind::NotFound, errc::not_found, "no dataset uploaded in this session");
  return *s.dataset;
}

std::string treatment_for(const Service::Session& s, const json& body) {
  if (body.contains("treatment")) return string_field(body, "treatment");
  if (s.dag.treatment()) return *s.dag.treatment();
  fail(ErrorKind::Statistical, errc::missing_designation, "no treatment given or designated in the DAG");
}

std::string outcome_for(const Service::Session& s, const json& body) {
  if (body.contains("outcome")) return string_field(body, "outcome");
  if (s.dag.outcome()) return *s.dag.outcome();
  fail(ErrorKind::Statistical, errc::missing_designation, "no outcome given or designated in the DAG");
}

// Explicit covariates, or the confounders and prognostic factors of the DAG.
std::vector<std::string> covariates_for(const Service::Session& s, const json& body) {
  std::vector<std::string> names;
  if (body.contains("covariates")) {
    names = strings_field(body, "covariates");
  } else {
    const auto cls = classify(s.dag);
    names = cls.confounders;
    names.insert(names.end(), cls.prognostics.begin(), cls.prognostics.end());
  }
  return resolve_columns(need_dataset(s), names);
}

std::span<const double> need_scores(const Service::Session& s) {
  if (s.scores.empty()) fail(ErrorKind::NotFound, errc::not_found, "no propensity scores in this session");
  return s.scores;
}

const MatchResult& need_match(const Service::Session& s) {
  if (!s.match) fail(ErrorKind::NotFound, errc::not_found, "no match result in this session");
  return *s.match;
}

std::string node_from_path(const std::string& path, const std::string& prefix) {
  return path.substr(prefix.size());
}

json session_to_json(const Service::Session& s) {
  json doc{{"counter", s.counter},
           {"dag", dag_to_json(s.dag)},
           {"ps_treatment", s.ps_treatment},
           {"scores", numbers_or_null(s.scores)},
           {"match_treatment", s.match_treatment},
           {"versions", save_versions(s.versions)}};
  if (s.dataset) doc["dataset"] = dataset_to_json(*s.dataset);
  if (s.model) doc["model"] = model_to_json(*s.model);
  if (s.weights) doc["weights"] = weights_to_json(*s.weights);
  if (s.match) doc["match"] = match_to_json(*s.match);
  return doc;
}

void session_from_json(Service::Session& s, const json& doc) {
  s.counter = doc.at("counter").get<std::uint64_t>();
  s.dag = dag_from_json(doc.at("dag"));
  s.ps_treatment = doc.value("ps_treatment", std::string{});
  s.scores = numbers_from(doc.at("scores"));
  s.match_treatment = doc.value("match_treatment", std::string{});
  s.versions = load_versions(doc.at("versions"));
  if (doc.contains("dataset")) s.dataset = dataset_from_json(doc["dataset"]);
  if (doc.contains("model")) s.model = model_from_json(doc["model"]);
  if (doc.contains("weights")) s.weights = weights_from_json(doc["weights"]);
  if (doc.contains("match")) s.match = match_from_json(doc["match"]);
}

// ---- endpoint bodies ----------------------------------------------------------

struct Outcome {
  json body;
  bool mutated = false;
  bool raw = false;  // export documents carry no counter field
};

Outcome post_dataset(Service::Session& s, const Request& r) {
  CsvOptions opts;
  std::string text;
  json prep;
  if (r.content_type.starts_with("application/json")) {
    const json body = body_json(r);
    text = string_field(body, "csv");
    if (body.contains("overrides")) {
      for (const auto& [col, kind] : body["overrides"].items()) {
        opts.typing_overrides[col] = column_kind_from_string(kind.get<std::string>());
      }
    }
    if (body.contains("prep")) prep = body["prep"];
  } else {
    text = r.body;
  }
  Dataset ds = apply_prep(parse_csv(text, opts), prep);
  json summary = dataset_summary(ds);
  s.dataset = std::move(ds);
  s.reset_derived();
  return {summary, true};
}

Outcome transform_dataset(Service::Session& s, const Request& r) {
  Dataset ds = apply_prep(need_dataset(s), body_json(r));
  json summary = dataset_summary(ds);
  s.dataset = std::move(ds);
  s.reset_derived();
  return {summary, true};
}

Outcome post_node(Service::Session& s, const Request& r) {
  const json body = body_json(r);
  std::optional<Position> pos;
  if (body.contains("x") || body.contains("y")) {
    pos = Position{value_or(body, "x", 0.0), value_or(body, "y", 0.0)};
  }
  CausalDag next = s.dag;
  next.add_node(string_field(body, "name"), pos);
  s.dag = std::move(next);
  return {dag_to_json(s.dag), true};
}

Outcome post_layout(Service::Session& s, const Request& r) {
  const json body = body_json(r);
  CausalDag next = s.dag;
  const std::string name = string_field(body, "name");
  if (body.contains("x") || body.contains("y")) {
    next.set_position(name, Position{value_or(body, "x", 0.0), value_or(body, "y", 0.0)});
  }
  if (body.contains("tags")) next.set_tags(name, strings_field(body, "tags"));
  s.dag = std::move(next);
  return {dag_to_json(s.dag), true};
}

Outcome set_role(Service::Session& s, const Request& r, bool treatment) {
  const json body = body_json(r);
  CausalDag next = s.dag;
  const json& name = detail::require(body, "name", "request");
  if (name.is_null()) {
    treatment ? next.clear_treatment() : next.clear_outcome();
  } else {
    const std::string n = string_field(body, "name");
    treatment ? next.set_treatment(n) : next.set_outcome(n);
  }
  s.dag = std::move(next);
  return {dag_to_json(s.dag), true};
}

Outcome fit(Service::Session& s, const Request& r) {
  const json body = body_json(r);
  const Dataset& ds = need_dataset(s);
  const std::string t = treatment_for(s, body);
  const auto covs = covariates_for(s, body);
  FitOptions opts;
  opts.lambda = value_or(body, "lambda", opts.lambda);
  PropensityModel model = fit_propensity(ds, covs, t, opts);
  std::vector<double> scores = predict(model, ds);

  std::vector<double> tt, ss;
  const auto tv = ds.numeric(t);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    tt.push_back(tv[i]);
    ss.push_back(scores[i]);
  }
  // Weights only exist where both score and treatment are observed; the
  // others get weight 1 and are excluded from every weighted estimate by the
  // complete-case filters downstream.
  std::vector<double> sw, stw;
  for (std::size_t i = 0; i < ss.size(); ++i) {
    if (!std::isnan(ss[i]) && !std::isnan(tt[i])) {
      sw.push_back(ss[i]);
      stw.push_back(tt[i]);
    }
  }
  const bool stabilized = value_or(body, "stabilized", false);
  WeightVector partial = ipw_weights(sw, stw, stabilized);
  WeightVector w;
  w.stabilized = stabilized;
  std::size_t k = 0;
  for (std::size_t i = 0; i < ss.size(); ++i) {
    const bool ok = !std::isnan(ss[i]) && !std::isnan(tt[i]);
    w.weights.push_back(ok ? partial.weights[k++] : 1.0);
  }

  json out{{"model", model_to_json(model)},
           {"row_ids", ds.row_ids()},
           {"scores", numbers_or_null(scores)},
           {"weights", weights_to_json(w)}};
  s.model = std::move(model);
  s.ps_treatment = t;
  s.scores = std::move(scores);
  s.weights = std::move(w);
  s.match.reset();
  return {out, true};
}

Outcome set_scores(Service::Session& s, const Request& r) {
  const json body = body_json(r);
  const Dataset& ds = need_dataset(s);
  const std::string t = treatment_for(s, body);
  std::vector<double> scores = numbers_from(detail::require(body, "scores", "request"));
  if (scores.size() != ds.n_rows()) fail(ErrorKind::Validation, errc::length_mismatch, "scores do not align with the dataset");
  for (double p : scores) {
    if (!std::isnan(p) && !(p > 0.0 && p < 1.0)) {
      fail(ErrorKind::Validation, errc::score_out_of_range, "scores must lie strictly inside (0, 1)");
    }
  }
  s.model.reset();
  s.ps_treatment = t;
  s.scores = std::move(scores);
  s.weights.reset();
  s.match.reset();
  return {json{{"n", s.scores.size()}}, true};
}

Outcome histogram(Service::Session& s, const Request& r) {
  std::size_t bins = 20;
  if (auto it = r.query.find("bins"); it != r.query.end()) {
    try {
      bins = std::stoul(it->second);
    } catch (const std::exception&) {
      fail(ErrorKind::Validation, errc::bad_request, "bins must be a positive integer");
    }
  }
  const auto scores = need_scores(s);
  const auto t = need_dataset(s).numeric(s.ps_treatment);
  std::vector<double> ss, tt;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i]) || std::isnan(t[i])) continue;
    ss.push_back(scores[i]);
    tt.push_back(t[i]);
  }
  return {histogram_to_json(propensity_histogram(ss, tt, bins))};
}

Outcome select(Service::Session& s, const Request& r) {
  const json body = body_json(r);
  const json& range = detail::require(body, "range", "request");
  if (!range.is_array() || range.size() != 2 || !range[0].is_number() || !range[1].is_number()) {
    fail(ErrorKind::Validation, errc::schema_error, "range must be [lo, hi]");
  }
  const auto scores = need_scores(s);
  const auto& ids = need_dataset(s).row_ids();
  std::vector<double> ss;
  std::vector<RowId> kept;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) continue;
    ss.push_back(scores[i]);
    kept.push_back(ids[i]);
  }
  return {selection_to_json(select_by_score(ss, range[0].get<double>(), range[1].get<double>(), kept))};
}

Outcome balance(Service::Session& s, const Request& r) {
  const json body = body_json(r);
  const Dataset& ds = need_dataset(s);
  const std::string t = treatment_for(s, body);
  const auto covs = covariates_for(s, body);
  const std::string adjust = value_or(body, "adjust", std::string("none"));

  std::optional<Dataset> cohort;
  const WeightVector* w = nullptr;
  if (adjust == "matched") {
    cohort = matched_cohort(ds, need_match(s));
  } else if (adjust == "ids") {
    cohort = ds.select_ids(detail::require(body, "ids", "request").get<std::vector<RowId>>());
  } else if (adjust == "weights") {
    if (!s.weights) fail(ErrorKind::NotFound, errc::not_found, "no weights in this session");
    w = &*s.weights;
  } else if (adjust != "none") {
    fail(ErrorKind::Validation, errc::bad_request, "adjust must be none, matched, ids or weights");
  }
  const Dataset* adj = cohort ? &*cohort : nullptr;
  BalanceReport report = balance_report(ds, covs, t, adj, w);
  if (body.contains("sort")) {
    report = sort_report(std::move(report), sort_key_from_string(string_field(body, "sort")),
                         value_or(body, "descending", true));
  }
  std::optional<std::vector<std::string>> show;
  if (body.contains("show")) show = strings_field(body, "show");
  return {json{{"report", report_to_json(report)}, {"details", details_to_json(details_view(report, ds, t, adj, w, show))}}};
}

Outcome do_match(Service::Session& s, const Request& r) {
  const json body = body_json(r);
  const Dataset& ds = need_dataset(s);
  const std::string t = treatment_for(s, body);
  MatchSpec spec = match_spec_from_json(body);
  if (spec.metric == MatchMetric::Mahalanobis) {
    spec.covariates = body.contains("covariates") ? resolve_columns(ds, spec.covariates) : covariates_for(s, body);
  }
  MatchResult result = match(ds, t, spec, s.scores);
  json out = match_to_json(result);
  s.match = std::move(result);
  s.match_treatment = t;
  return {out, true};
}

Outcome effects_matched(Service::Session& s, const Request& r) {
  const json body = body_json(r);
  const auto ites = pair_effects(need_match(s), need_dataset(s), outcome_for(s, body));
  return {effect_to_json(ate_matched(ites, value_or(body, "n_boot", kDefaultBootstrap), value_or(body, "seed", kDefaultSeed)))};
}

Outcome effects_ipw(Service::Session& s, const Request& r) {
  const json body = body_json(r);
  if (!s.weights) fail(ErrorKind::NotFound, errc::not_found, "no weights in this session");
  const std::string t = s.ps_treatment.empty() ? treatment_for(s, body) : s.ps_treatment;
  const Dataset& ds = need_dataset(s);
  // Rows without a score carry placeholder weights; drop them here.
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.n_rows(); ++i) {
    if (!std::isnan(s.scores[i])) keep.push_back(i);
  }
  WeightVector w;
  for (auto i : keep) w.weights.push_back(s.weights->weights[i]);
  const Dataset sub = ds.select_positions(keep);
  return {effect_to_json(ate_ipw(sub, t, outcome_for(s, body), w, value_or(body, "n_boot", kDefaultBootstrap),
                                 value_or(body, "seed", kDefaultSeed)))};
}

Outcome effects_facet(Service::Session& s, const Request& r) {
  const json body = body_json(r);
  const MatchResult& m = need_match(s);
  const Dataset& ds = need_dataset(s);
  const auto ites = pair_effects(m, ds, outcome_for(s, body));
  SubgroupSpec spec;
  if (body.contains("variables")) spec.variables = strings_field(body, "variables");
  if (body.contains("thresholds")) {
    try {
      spec.thresholds = body["thresholds"].get<std::map<std::string, double>>();
    } catch (const json::exception&) {
      fail(ErrorKind::Validation, errc::schema_error, "thresholds must map names to numbers");
    }
  }
  return {subgroup_table_to_json(facet(ites, pair_covariates(m, ds), spec))};
}

Outcome post_version(Service::Session& s, const Request& r) {
  const json body = body_json(r);
  std::vector<RowId> ids;
  if (body.contains("row_ids")) {
    ids = value_or(body, "row_ids", std::vector<RowId>{});
  } else {
    for (const auto& p : need_match(s).pairs) {
      ids.push_back(p.treated);
      ids.push_back(p.control);
    }
  }
  double ate = 0.0;
  if (body.contains("ate")) {
    ate = value_or(body, "ate", 0.0);
  } else {
    const auto ites = pair_effects(need_match(s), need_dataset(s), outcome_for(s, body));
    ate = ate_matched(ites, 0).ate;
  }
  if (s.dataset) {
    for (RowId id : ids) {
      if (!s.dataset->position_of(id)) fail(ErrorKind::Validation, errc::stale_ids, "unknown row id " + std::to_string(id));
    }
  }
  s.versions = add_version(std::move(s.versions), dag_to_json(s.dag), ids, ate, value_or(body, "timestamp", std::string{}),
                           value_or(body, "notes", std::string{}));
  return {save_versions(s.versions), true};
}

Outcome restore_version(Service::Session& s, const Request& r) {
  const json body = body_json(r);
  const std::string label = string_field(body, "label");
  for (const auto& d : s.versions.dag_versions) {
    if (d.label == label) {
      s.dag = dag_from_json(d.dag);
      return {dag_to_json(s.dag), true};
    }
  }
  fail(ErrorKind::NotFound, errc::not_found, "no DAG version labelled " + label);
}

Outcome route(Service::Session& s, const Request& r) {
  const std::string& m = r.method;
  const std::string& p = r.path;
  if (m == "GET" && p == "/session") {
    return {json{{"has_dataset", s.dataset.has_value()},
                 {"has_scores", !s.scores.empty()},
                 {"has_match", s.match.has_value()},
                 {"n_versions", s.versions.n_cohorts()}}};
  }
  if (m == "POST" && p == "/datasets") return post_dataset(s, r);
  if (m == "POST" && p == "/datasets/transform") return transform_dataset(s, r);
  if (m == "GET" && p == "/dataset") return {dataset_summary(need_dataset(s))};

  if (m == "GET" && p == "/dag") return {dag_to_json(s.dag)};
  if (m == "PUT" && p == "/dag") {
    const json body = body_json(r);
    const bool node_link = r.query.contains("format") && r.query.at("format") == "node_link";
    s.dag = node_link ? import_node_link(body) : dag_from_json(body);
    return {dag_to_json(s.dag), true};
  }
  if (m == "POST" && p == "/dag/nodes") return post_node(s, r);
  if (m == "DELETE" && p.starts_with("/dag/nodes/")) {
    CausalDag next = s.dag;
    next.remove_node(node_from_path(p, "/dag/nodes/"));
    s.dag = std::move(next);
    return {dag_to_json(s.dag), true};
  }
  if ((m == "POST" || m == "DELETE") && p == "/dag/edges") {
    const json body = body_json(r);
    CausalDag next = s.dag;
    if (m == "POST") {
      next.add_edge(string_field(body, "source"), string_field(body, "target"));
    } else {
      next.remove_edge(string_field(body, "source"), string_field(body, "target"));
    }
    s.dag = std::move(next);
    return {dag_to_json(s.dag), true};
  }
  if (m == "POST" && p == "/dag/layout") return post_layout(s, r);
  if (m == "POST" && p == "/dag/treatment") return set_role(s, r, true);
  if (m == "POST" && p == "/dag/outcome") return set_role(s, r, false);
  if (m == "GET" && p == "/dag/classification") return {classification_to_json(classify(s.dag))};

  if (m == "POST" && p == "/propensity/fit") return fit(s, r);
  if (m == "POST" && p == "/propensity/scores") return set_scores(s, r);
  if (m == "GET" && p == "/propensity/histogram") return histogram(s, r);
  if (m == "POST" && p == "/propensity/select") return select(s, r);
  if (m == "POST" && p == "/balance") return balance(s, r);
  if (m == "POST" && p == "/match") return do_match(s, r);
  if (m == "POST" && p == "/effects/matched") return effects_matched(s, r);
  if (m == "POST" && p == "/effects/ipw") return effects_ipw(s, r);
  if (m == "POST" && p == "/effects/facet") return effects_facet(s, r);

  if (m == "POST" && p == "/versions") return post_version(s, r);
  if (m == "POST" && p == "/versions/restore") return restore_version(s, r);
  if (m == "GET" && p == "/versions/icicle") return {json{{"icicle", icicle_data(s.versions)}}};
  if (m == "GET" && p == "/versions/ates") return {json{{"ates", ate_series_to_json(s.versions)}}};
  if (m == "GET" && p == "/export/dag.json") return {dag_to_json(s.dag), false, true};
  if (m == "GET" && p == "/export/versions.json") return {save_versions(s.versions), false, true};

  fail(ErrorKind::NotFound, errc::not_found, "no route for " + m + " " + p);
}

}  // namespace

Service::Service(ServiceConfig config) : config_(std::move(config)) {
  if (config_.state_dir) load_persisted();
}

Service::~Service() = default;

std::size_t Service::n_sessions() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

std::shared_ptr<Service::Session> Service::open_session(const Request& request, std::string& id) {
  std::lock_guard lock(mutex_);
  if (request.session && !request.session->empty()) {
    auto it = sessions_.find(*request.session);
    if (it == sessions_.end()) fail(ErrorKind::NotFound, errc::not_found, "unknown session " + *request.session);
    id = it->first;
    return it->second;
  }
  do {
    id = mint_id();
  } while (sessions_.contains(id));
  auto s = std::make_shared<Session>();
  sessions_[id] = s;
  return s;
}

Response Service::handle(const Request& request) {
  Response resp;
  std::shared_ptr<Session> session;
  try {
    if (request.body.size() > config_.max_upload_bytes) {
      fail(ErrorKind::Validation, errc::payload_too_large, "request body exceeds the upload limit");
    }
    session = open_session(request, resp.session);
    std::lock_guard lock(session->mutex);
    session->last_used = std::chrono::steady_clock::now();
    Outcome out = route(*session, request);
    if (out.mutated) {
      ++session->counter;
      persist(resp.session, *session);
    }
    resp.mutation_counter = session->counter;
    resp.body = std::move(out.body);
    if (!out.raw && resp.body.is_object()) resp.body["mutation_counter"] = session->counter;
  } catch (const Error& e) {
    resp.status = status_for(e);
    resp.body = json{{"error", e.code()}, {"detail", e.what()}};
  } catch (const json::exception& e) {
    resp.status = 400;
    resp.body = json{{"error", std::string(errc::schema_error)}, {"detail", e.what()}};
  } catch (const std::exception& e) {
    resp.status = 500;
    resp.body = json{{"error", "internal"}, {"detail", e.what()}};
  }
  if (session && resp.status != 200) {
    std::lock_guard lock(session->mutex);
    resp.mutation_counter = session->counter;
  }
  return resp;
}

std::size_t Service::evict_idle(std::chrono::steady_clock::time_point now) {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    bool idle = false;
    {
      std::lock_guard slock(it->second->mutex);
      idle = now - it->second->last_used > config_.idle_ttl;
    }
    if (idle) {
      if (config_.state_dir) {
        std::error_code ec;
        fs::remove(fs::path(*config_.state_dir) / (it->first + ".json"), ec);
      }
      it = sessions_.erase(it);
      ++n;
    } else {
      ++it;
    }
  }
  return n;
}

void Service::persist(const std::string& id, const Session& s) const {
  if (!config_.state_dir) return;
  const fs::path dir(*config_.state_dir);
  const fs::path tmp = dir / (id + ".json.tmp");
  write_text_file(tmp.string(), session_to_json(s).dump());
  std::error_code ec;
  fs::rename(tmp, dir / (id + ".json"), ec);
  if (ec) fail(ErrorKind::Io, errc::io_error, "cannot persist session: " + ec.message());
}

void Service::load_persisted() {
  const fs::path dir(*config_.state_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, errc::io_error, "cannot create state directory " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    const std::string id = entry.path().stem().string();
    if (!valid_id(id)) continue;
    auto s = std::make_shared<Session>();
    try {
      session_from_json(*s, read_json_file(entry.path().string()));
    } catch (const std::exception& e) {
      std::fprintf(stderr, "skipping unreadable session %s: %s\n", id.c_str(), e.what());
      continue;
    }
    sessions_[id] = std::move(s);
  }
}

// ---- HTTP transport -------------------------------------------------------------

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  std::thread thread;
  std::thread janitor;
  std::atomic<bool> stopping{false};

  explicit Impl(Service& s) : service(s) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      Request r;
      r.method = req.method;
      r.path = req.path;
      for (const auto& [k, v] : req.params) r.query[k] = v;
      if (req.has_header("X-Session")) r.session = req.get_header_value("X-Session");
      r.body = req.body;
      r.content_type = req.get_header_value("Content-Type");
      const Response out = service.handle(r);
      res.status = out.status;
      if (!out.session.empty()) res.set_header("X-Session", out.session);
      res.set_header("X-Mutation-Counter", std::to_string(out.mutation_counter));
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Expose-Headers", "X-Session, X-Mutation-Counter");
      res.set_content(out.body.dump(), "application/json");
    };
    const char* any = R"(/.*)";
    server.Get(any, handler);
    server.Post(any, handler);
    server.Put(any, handler);
    server.Delete(any, handler);
    server.Options(any, [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, PUT, DELETE, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type, X-Session");
      res.status = 204;
    });
  }

  void start_janitor() {
    janitor = std::thread([this] {
      while (!stopping) {
        for (int i = 0; i < 60 && !stopping; ++i) std::this_thread::sleep_for(std::chrono::seconds(1));
        if (!stopping) service.evict_idle();
      }
    });
  }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host.c_str());
  } else if (!impl_->server.bind_to_port(host.c_str(), port)) {
    bound = -1;
  }
  if (bound < 0) fail(ErrorKind::Io, errc::io_error, "cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  impl_->start_janitor();
  return bound;
}

void HttpServer::run(const std::string& host, int port) {
  start(host, port);
  if (impl_->thread.joinable()) impl_->thread.join();
}

void HttpServer::stop() {
  impl_->stopping = true;
  impl_->server.stop();
  if (impl_->thread.joinable() && impl_->thread.get_id() != std::this_thread::get_id()) impl_->thread.join();
  if (impl_->janitor.joinable()) impl_->janitor.join();
}

}  // namespace cwb
