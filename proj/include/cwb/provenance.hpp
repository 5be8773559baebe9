#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cwb/dag.hpp"
#include "cwb/dataset.hpp"
#include "cwb/json.hpp"

namespace cwb {

struct CohortVersion {
  std::string fingerprint;
  std::string label;  // "Cohort k.j"
  std::vector<RowId> row_ids;  // sorted, unique
  std::size_t n = 0;
  double ate = 0.0;
  std::string timestamp;
  std::string notes;
  std::size_t seq = 0;  // 1-based position in global add order
  bool operator==(const CohortVersion&) const = default;
};

struct DagVersion {
  std::string hash;
  std::string label;  // "DAG k"
  json dag;           // document as first recorded, layout included
  std::vector<CohortVersion> cohorts;
  bool operator==(const DagVersion&) const = default;
};

struct VersionTree {
  std::vector<DagVersion> dag_versions;
  bool empty() const { return dag_versions.empty(); }
  std::size_t n_cohorts() const;
  bool operator==(const VersionTree&) const = default;
};

std::string sha256_hex(std::string_view bytes);

// Digest of nodes, edges, treatment and outcome; layout and tags excluded.
std::string dag_hash(const CausalDag& dag);
// Digest of the sorted, de-duplicated row ids.
std::string cohort_fingerprint(std::span<const RowId> ids);

// UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

// Appends a cohort under the version whose DAG matches structurally, creating
// that version first if needed. An empty timestamp means now.
VersionTree add_version(VersionTree tree, const json& dag_document, std::span<const RowId> cohort_ids, double ate,
                        std::string timestamp = {}, std::string notes = {});

// [{"label","hash","x0","width","cohorts":[{"label","fingerprint","x0","width","n","ate"}]}]
// Widths are leaf-count shares, laid out left to right in insertion order.
json icicle_data(const VersionTree& tree);

std::vector<std::pair<std::string, double>> ate_series(const VersionTree& tree);
json ate_series_to_json(const VersionTree& tree);

json save_versions(const VersionTree& tree);
// Recomputes every hash and fingerprint; a mismatch raises hash_mismatch.
VersionTree load_versions(const json& doc);

}  // namespace cwb
