#include "cwb/provenance.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <memory>

#include <openssl/evp.h>

namespace cwb {

namespace {

json canonical_form(const CausalDag& dag) {
  json edges = json::array();
  for (const auto& [s, t] : dag.edges()) edges.push_back(json::array({s, t}));
  return json{{"nodes", dag.nodes()},
              {"edges", std::move(edges)},
              {"treatment", dag.treatment() ? json(*dag.treatment()) : json(nullptr)},
              {"outcome", dag.outcome() ? json(*dag.outcome()) : json(nullptr)}};
}

std::vector<RowId> normalized_ids(std::span<const RowId> ids) {
  std::vector<RowId> v(ids.begin(), ids.end());
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::string dag_label(std::size_t k) { return "DAG " + std::to_string(k); }
std::string cohort_label(std::size_t k, std::size_t j) {
  return "Cohort " + std::to_string(k) + "." + std::to_string(j);
}

}  // namespace

std::size_t VersionTree::n_cohorts() const {
  std::size_t n = 0;
  for (const auto& d : dag_versions) n += d.cohorts.size();
  return n;
}

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

std::string dag_hash(const CausalDag& dag) { return sha256_hex(canonical_form(dag).dump()); }

std::string cohort_fingerprint(std::span<const RowId> ids) {
  std::string text;
  for (RowId id : normalized_ids(ids)) {
    if (!text.empty()) text.push_back(',');
    text += std::to_string(id);
  }
  return sha256_hex(text);
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

VersionTree add_version(VersionTree tree, const json& dag_document, std::span<const RowId> cohort_ids, double ate,
                        std::string timestamp, std::string notes) {
  const CausalDag dag = dag_from_json(dag_document);
  if (!std::isfinite(ate)) fail(ErrorKind::Validation, errc::bad_request, "ATE must be finite");
  const std::string hash = dag_hash(dag);

  auto it = std::find_if(tree.dag_versions.begin(), tree.dag_versions.end(),
                         [&](const DagVersion& d) { return d.hash == hash; });
  if (it == tree.dag_versions.end()) {
    DagVersion v;
    v.hash = hash;
    v.label = dag_label(tree.dag_versions.size() + 1);
    v.dag = dag_to_json(dag);
    tree.dag_versions.push_back(std::move(v));
    it = std::prev(tree.dag_versions.end());
  }
  const auto k = static_cast<std::size_t>(it - tree.dag_versions.begin()) + 1;

  CohortVersion c;
  c.row_ids = normalized_ids(cohort_ids);
  c.n = c.row_ids.size();
  c.fingerprint = cohort_fingerprint(c.row_ids);
  c.label = cohort_label(k, it->cohorts.size() + 1);
  c.ate = ate;
  c.timestamp = timestamp.empty() ? utc_timestamp() : std::move(timestamp);
  c.notes = std::move(notes);
  c.seq = tree.n_cohorts() + 1;
  it->cohorts.push_back(std::move(c));
  return tree;
}

json icicle_data(const VersionTree& tree) {
  json out = json::array();
  const auto total = static_cast<double>(tree.n_cohorts());
  if (total == 0) return out;
  std::size_t leaves_before = 0;
  for (const auto& d : tree.dag_versions) {
    json cohorts = json::array();
    for (std::size_t j = 0; j < d.cohorts.size(); ++j) {
      const auto& c = d.cohorts[j];
      cohorts.push_back({{"label", c.label},
                         {"fingerprint", c.fingerprint},
                         {"x0", static_cast<double>(leaves_before + j) / total},
                         {"width", 1.0 / total},
                         {"n", c.n},
                         {"ate", c.ate}});
    }
    out.push_back({{"label", d.label},
                   {"hash", d.hash},
                   {"x0", static_cast<double>(leaves_before) / total},
                   {"width", static_cast<double>(d.cohorts.size()) / total},
                   {"cohorts", std::move(cohorts)}});
    leaves_before += d.cohorts.size();
  }
  return out;
}

std::vector<std::pair<std::string, double>> ate_series(const VersionTree& tree) {
  std::vector<const CohortVersion*> all;
  for (const auto& d : tree.dag_versions) {
    for (const auto& c : d.cohorts) all.push_back(&c);
  }
  std::sort(all.begin(), all.end(), [](const CohortVersion* a, const CohortVersion* b) { return a->seq < b->seq; });
  std::vector<std::pair<std::string, double>> out;
  for (const auto* c : all) out.emplace_back(c->label, c->ate);
  return out;
}

json ate_series_to_json(const VersionTree& tree) {
  json out = json::array();
  for (const auto& [label, ate] : ate_series(tree)) out.push_back({{"label", label}, {"ate", ate}});
  return out;
}

json save_versions(const VersionTree& tree) {
  json dags = json::array();
  for (const auto& d : tree.dag_versions) {
    json cohorts = json::array();
    for (const auto& c : d.cohorts) {
      cohorts.push_back({{"fingerprint", c.fingerprint},
                         {"label", c.label},
                         {"row_ids", c.row_ids},
                         {"n", c.n},
                         {"ate", c.ate},
                         {"timestamp", c.timestamp},
                         {"notes", c.notes},
                         {"seq", c.seq}});
    }
    dags.push_back({{"hash", d.hash}, {"label", d.label}, {"dag", d.dag}, {"cohorts", std::move(cohorts)}});
  }
  return json{{"dags", std::move(dags)}};
}

VersionTree load_versions(const json& doc) {
  try {
    VersionTree tree;
    const json& dags = detail::require(doc, "dags", "versions");
    if (!dags.is_array()) fail(ErrorKind::Validation, errc::schema_error, "versions: dags must be an array");
    for (const auto& d : dags) {
      DagVersion v;
      v.hash = detail::require(d, "hash", "dag version").get<std::string>();
      v.label = detail::require(d, "label", "dag version").get<std::string>();
      v.dag = detail::require(d, "dag", "dag version");
      const std::size_t k = tree.dag_versions.size() + 1;
      if (v.label != dag_label(k)) fail(ErrorKind::Validation, errc::schema_error, "unexpected label " + v.label);
      if (dag_hash(dag_from_json(v.dag)) != v.hash) {
        fail(ErrorKind::Validation, errc::hash_mismatch, v.label + ": stored hash does not match its DAG");
      }
      for (const auto& prior : tree.dag_versions) {
        if (prior.hash == v.hash) fail(ErrorKind::Validation, errc::schema_error, v.label + " duplicates " + prior.label);
      }
      for (const auto& c : detail::require(d, "cohorts", "dag version")) {
        CohortVersion cv;
        cv.fingerprint = detail::require(c, "fingerprint", "cohort").get<std::string>();
        cv.label = detail::require(c, "label", "cohort").get<std::string>();
        cv.row_ids = detail::require(c, "row_ids", "cohort").get<std::vector<RowId>>();
        cv.n = detail::require(c, "n", "cohort").get<std::size_t>();
        cv.ate = detail::require(c, "ate", "cohort").get<double>();
        cv.timestamp = c.value("timestamp", std::string{});
        cv.notes = c.value("notes", std::string{});
        cv.seq = detail::require(c, "seq", "cohort").get<std::size_t>();
        if (cv.label != cohort_label(k, v.cohorts.size() + 1)) {
          fail(ErrorKind::Validation, errc::schema_error, "unexpected label " + cv.label);
        }
        if (normalized_ids(cv.row_ids) != cv.row_ids || cv.n != cv.row_ids.size() ||
            cohort_fingerprint(cv.row_ids) != cv.fingerprint) {
          fail(ErrorKind::Validation, errc::hash_mismatch, cv.label + ": fingerprint does not match its rows");
        }
        v.cohorts.push_back(std::move(cv));
      }
      tree.dag_versions.push_back(std::move(v));
    }
    std::vector<std::size_t> seqs;
    for (const auto& d : tree.dag_versions) {
      for (const auto& c : d.cohorts) seqs.push_back(c.seq);
    }
    std::sort(seqs.begin(), seqs.end());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      if (seqs[i] != i + 1) fail(ErrorKind::Validation, errc::schema_error, "versions: cohort sequence numbers are not 1..n");
    }
    return tree;
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, errc::schema_error, std::string("versions: ") + e.what());
  }
}

}  // namespace cwb
