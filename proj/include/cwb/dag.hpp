#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cwb/json.hpp"

namespace cwb {

struct Position {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Position&) const = default;
};

using Edge = std::pair<std::string, std::string>;

// Directed acyclic graph of named variables with optional treatment/outcome
// designations. Every mutator either succeeds or throws and leaves the graph
// untouched, so a rejected edit never changes the value.
class CausalDag {
public:
  CausalDag() = default;

  void add_node(std::string_view name, std::optional<Position> position = std::nullopt);
  // Removes the node, its incident edges, its layout entry and any role it held.
  void remove_node(std::string_view name);

  void add_edge(std::string_view source, std::string_view target);
  void remove_edge(std::string_view source, std::string_view target);

  void set_treatment(std::string_view name);
  void set_outcome(std::string_view name);
  void clear_treatment() { treatment_.reset(); }
  void clear_outcome() { outcome_.reset(); }

  void set_position(std::string_view name, Position position);
  void set_tags(std::string_view name, std::vector<std::string> tags);

  bool has_node(std::string_view name) const;
  bool has_edge(std::string_view source, std::string_view target) const;

  const std::set<std::string>& nodes() const { return nodes_; }
  const std::set<Edge>& edges() const { return edges_; }
  const std::optional<std::string>& treatment() const { return treatment_; }
  const std::optional<std::string>& outcome() const { return outcome_; }
  const std::map<std::string, Position>& layout() const { return layout_; }
  const std::map<std::string, std::vector<std::string>>& tags() const { return tags_; }

  const std::set<std::string>& children(const std::string& name) const;
  const std::set<std::string>& parents(const std::string& name) const;

  // Transitive reachability (excluding the start node itself).
  std::set<std::string> descendants(const std::string& name) const;
  std::set<std::string> ancestors(const std::string& name) const;

  // Kahn order with lexicographic tie-breaking.
  std::vector<std::string> topological_order() const;

  // Compares nodes, edges, roles, layout and tags.
  bool operator==(const CausalDag& other) const;

private:
  // True when `to` is reachable from `from` along directed edges.
  bool reaches(const std::string& from, const std::string& to) const;
  std::string checked_name(std::string_view raw) const;

  std::set<std::string> nodes_;
  std::set<Edge> edges_;
  std::map<std::string, std::set<std::string>> children_;
  std::map<std::string, std::set<std::string>> parents_;
  std::optional<std::string> treatment_;
  std::optional<std::string> outcome_;
  std::map<std::string, Position> layout_;
  std::map<std::string, std::vector<std::string>> tags_;
};

// Trims surrounding whitespace; throws invalid_name on an empty result.
std::string normalize_node_name(std::string_view raw);

enum class NodeClass { Treatment, Outcome, Confounder, Mediator, Collider, Prognostic, Unclassified };

std::string_view to_string(NodeClass c);

struct ClassificationResult {
  std::map<std::string, NodeClass> classes;
  std::vector<std::string> confounders;
  std::vector<std::string> colliders;
  std::vector<std::string> mediators;
  std::vector<std::string> prognostics;
};

// Labels every node relative to the designated treatment T and outcome Y:
//   mediator    v in desc(T) and anc(Y)
//   confounder  v in anc(T) with a directed path to Y that avoids T
//   collider    v in desc(T) and desc(Y)
//   prognostic  v in anc(Y), outside anc(T) and desc(T)
// Throws missing_designation unless both roles are set.
ClassificationResult classify(const CausalDag& dag);

json dag_to_json(const CausalDag& dag);
// Strict reader for the native document ({"nodes":[{"name"...}], "links": ...}).
CausalDag dag_from_json(const json& doc);
// Lenient reader for node-link documents such as those written by networkx:
// accepts "id" or "name" and "links" or "edges". Designations are dropped.
CausalDag import_node_link(const json& doc);

json classification_to_json(const ClassificationResult& result);

}  // namespace cwb
