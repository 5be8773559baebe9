#include "cwb/dag.hpp"

#include <algorithm>
#include <deque>
#include <queue>

namespace cwb {

namespace {

const std::set<std::string> kNoNeighbours;

std::set<std::string> bfs(const std::map<std::string, std::set<std::string>>& adjacency,
                          const std::string& start, const std::string* blocked = nullptr) {
  std::set<std::string> seen;
  std::deque<std::string> frontier{start};
  while (!frontier.empty()) {
    const std::string cur = std::move(frontier.front());
    frontier.pop_front();
    auto it = adjacency.find(cur);
    if (it == adjacency.end()) continue;
    for (const auto& next : it->second) {
      if (blocked != nullptr && next == *blocked) continue;
      if (next == start) continue;
      if (seen.insert(next).second) frontier.push_back(next);
    }
  }
  return seen;
}

std::string node_key(const json& value, std::string_view context) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer() || value.is_number_unsigned()) return value.dump();
  fail(ErrorKind::Validation, errc::schema_error,
       std::string(context) + ": node identifiers must be strings or integers");
}

}  // namespace

std::string normalize_node_name(std::string_view raw) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  const auto first = raw.find_first_not_of(ws);
  if (first == std::string_view::npos) {
    fail(ErrorKind::Validation, errc::invalid_name, "node names must be nonempty");
  }
  const auto last = raw.find_last_not_of(ws);
  return std::string(raw.substr(first, last - first + 1));
}

std::string CausalDag::checked_name(std::string_view raw) const {
  std::string name = normalize_node_name(raw);
  if (!nodes_.contains(name)) fail(ErrorKind::Validation, errc::unknown_node, "unknown node: " + name);
  return name;
}

void CausalDag::add_node(std::string_view raw, std::optional<Position> position) {
  std::string name = normalize_node_name(raw);
  if (nodes_.contains(name)) fail(ErrorKind::Validation, errc::duplicate_node, "node exists: " + name);
  if (position) layout_[name] = *position;
  nodes_.insert(std::move(name));
}

void CausalDag::remove_node(std::string_view raw) {
  const std::string name = checked_name(raw);
  for (const auto& child : children(name)) {
    parents_[child].erase(name);
    edges_.erase({name, child});
  }
  for (const auto& parent : parents(name)) {
    children_[parent].erase(name);
    edges_.erase({parent, name});
  }
  children_.erase(name);
  parents_.erase(name);
  layout_.erase(name);
  tags_.erase(name);
  if (treatment_ == name) treatment_.reset();
  if (outcome_ == name) outcome_.reset();
  nodes_.erase(name);
}

bool CausalDag::reaches(const std::string& from, const std::string& to) const {
  if (from == to) return true;
  std::set<std::string> seen{from};
  std::deque<std::string> frontier{from};
  while (!frontier.empty()) {
    const auto& kids = children(frontier.front());
    frontier.pop_front();
    for (const auto& next : kids) {
      if (next == to) return true;
      if (seen.insert(next).second) frontier.push_back(next);
    }
  }
  return false;
}

void CausalDag::add_edge(std::string_view raw_source, std::string_view raw_target) {
  const std::string source = checked_name(raw_source);
  const std::string target = checked_name(raw_target);
  if (source == target) fail(ErrorKind::Validation, errc::self_edge, "self edge on " + source);
  if (edges_.contains({source, target})) {
    fail(ErrorKind::Validation, errc::duplicate_edge, "edge exists: " + source + " -> " + target);
  }
  if (reaches(target, source)) {
    fail(ErrorKind::Conflict, errc::cycle,
         "edge " + source + " -> " + target + " would close a directed cycle");
  }
  edges_.insert({source, target});
  children_[source].insert(target);
  parents_[target].insert(source);
}

void CausalDag::remove_edge(std::string_view raw_source, std::string_view raw_target) {
  const std::string source = checked_name(raw_source);
  const std::string target = checked_name(raw_target);
  if (edges_.erase({source, target}) == 0) {
    fail(ErrorKind::Validation, errc::unknown_edge, "no edge " + source + " -> " + target);
  }
  children_[source].erase(target);
  parents_[target].erase(source);
  if (children_[source].empty()) children_.erase(source);
  if (parents_[target].empty()) parents_.erase(target);
}

void CausalDag::set_treatment(std::string_view raw) {
  std::string name = checked_name(raw);
  if (outcome_ == name) fail(ErrorKind::Conflict, errc::role_conflict, name + " is already the outcome");
  treatment_ = std::move(name);
}

void CausalDag::set_outcome(std::string_view raw) {
  std::string name = checked_name(raw);
  if (treatment_ == name) fail(ErrorKind::Conflict, errc::role_conflict, name + " is already the treatment");
  outcome_ = std::move(name);
}

void CausalDag::set_position(std::string_view raw, Position position) {
  layout_[checked_name(raw)] = position;
}

void CausalDag::set_tags(std::string_view raw, std::vector<std::string> tags) {
  std::string name = checked_name(raw);
  if (tags.empty()) {
    tags_.erase(name);
  } else {
    tags_[std::move(name)] = std::move(tags);
  }
}

bool CausalDag::operator==(const CausalDag& other) const {
  return nodes_ == other.nodes_ && edges_ == other.edges_ && treatment_ == other.treatment_ &&
         outcome_ == other.outcome_ && layout_ == other.layout_ && tags_ == other.tags_;
}

bool CausalDag::has_node(std::string_view name) const { return nodes_.contains(std::string(name)); }

bool CausalDag::has_edge(std::string_view source, std::string_view target) const {
  return edges_.contains({std::string(source), std::string(target)});
}

const std::set<std::string>& CausalDag::children(const std::string& name) const {
  auto it = children_.find(name);
  return it == children_.end() ? kNoNeighbours : it->second;
}

const std::set<std::string>& CausalDag::parents(const std::string& name) const {
  auto it = parents_.find(name);
  return it == parents_.end() ? kNoNeighbours : it->second;
}

std::set<std::string> CausalDag::descendants(const std::string& name) const { return bfs(children_, name); }
std::set<std::string> CausalDag::ancestors(const std::string& name) const { return bfs(parents_, name); }

std::vector<std::string> CausalDag::topological_order() const {
  std::map<std::string, std::size_t> indegree;
  for (const auto& n : nodes_) indegree[n] = parents(n).size();
  std::priority_queue<std::string, std::vector<std::string>, std::greater<>> ready;
  for (const auto& [n, d] : indegree) {
    if (d == 0) ready.push(n);
  }
  std::vector<std::string> order;
  order.reserve(nodes_.size());
  while (!ready.empty()) {
    std::string cur = ready.top();
    ready.pop();
    for (const auto& child : children(cur)) {
      if (--indegree[child] == 0) ready.push(child);
    }
    order.push_back(std::move(cur));
  }
  return order;
}

std::string_view to_string(NodeClass c) {
  switch (c) {
    case NodeClass::Treatment: return "treatment";
    case NodeClass::Outcome: return "outcome";
    case NodeClass::Confounder: return "confounder";
    case NodeClass::Mediator: return "mediator";
    case NodeClass::Collider: return "collider";
    case NodeClass::Prognostic: return "prognostic";
    case NodeClass::Unclassified: return "unclassified";
  }
  return "unclassified";
}

ClassificationResult classify(const CausalDag& dag) {
  if (!dag.treatment() || !dag.outcome()) {
    fail(ErrorKind::Statistical, errc::missing_designation,
         "classification needs both a treatment and an outcome");
  }
  const std::string& t = *dag.treatment();
  const std::string& y = *dag.outcome();

  const auto desc_t = dag.descendants(t);
  const auto anc_t = dag.ancestors(t);
  const auto desc_y = dag.descendants(y);
  const auto anc_y = dag.ancestors(y);

  // Ancestors of Y along paths that never pass through T.
  std::map<std::string, std::set<std::string>> parents_map;
  for (const auto& [s, d] : dag.edges()) parents_map[d].insert(s);
  const auto anc_y_avoiding_t = bfs(parents_map, y, &t);

  ClassificationResult out;
  for (const auto& v : dag.nodes()) {
    NodeClass c = NodeClass::Unclassified;
    if (v == t) {
      c = NodeClass::Treatment;
    } else if (v == y) {
      c = NodeClass::Outcome;
    } else if (desc_t.contains(v) && anc_y.contains(v)) {
      c = NodeClass::Mediator;
    } else if (anc_t.contains(v) && anc_y_avoiding_t.contains(v)) {
      c = NodeClass::Confounder;
    } else if (desc_t.contains(v) && desc_y.contains(v)) {
      c = NodeClass::Collider;
    } else if (anc_y.contains(v) && !anc_t.contains(v) && !desc_t.contains(v)) {
      c = NodeClass::Prognostic;
    }
    out.classes.emplace(v, c);
    // dag.nodes() is ordered, so the projections come out sorted.
    switch (c) {
      case NodeClass::Confounder: out.confounders.push_back(v); break;
      case NodeClass::Mediator: out.mediators.push_back(v); break;
      case NodeClass::Collider: out.colliders.push_back(v); break;
      case NodeClass::Prognostic: out.prognostics.push_back(v); break;
      default: break;
    }
  }
  return out;
}

json dag_to_json(const CausalDag& dag) {
  json nodes = json::array();
  for (const auto& n : dag.nodes()) {
    json node{{"name", n}};
    if (auto it = dag.layout().find(n); it != dag.layout().end()) {
      node["x"] = it->second.x;
      node["y"] = it->second.y;
    }
    if (auto it = dag.tags().find(n); it != dag.tags().end()) node["tags"] = it->second;
    nodes.push_back(std::move(node));
  }
  json links = json::array();
  for (const auto& [s, t] : dag.edges()) links.push_back({{"source", s}, {"target", t}});
  json doc{{"nodes", std::move(nodes)}, {"links", std::move(links)}};
  if (dag.treatment()) doc["treatment"] = *dag.treatment();
  if (dag.outcome()) doc["outcome"] = *dag.outcome();
  return doc;
}

namespace {

struct ReaderOptions {
  bool lenient = false;
};

CausalDag read_dag(const json& doc, ReaderOptions opts) {
  const char* ctx = opts.lenient ? "node-link document" : "dag document";
  if (!doc.is_object()) fail(ErrorKind::Validation, errc::schema_error, std::string(ctx) + " must be an object");
  const json& nodes = detail::require(doc, "nodes", ctx);
  if (!nodes.is_array()) fail(ErrorKind::Validation, errc::schema_error, "\"nodes\" must be an array");

  CausalDag dag;
  for (const auto& node : nodes) {
    if (!node.is_object()) fail(ErrorKind::Validation, errc::schema_error, "node entries must be objects");
    std::string name;
    if (node.contains("name")) {
      name = node_key(node["name"], ctx);
    } else if (opts.lenient && node.contains("id")) {
      name = node_key(node["id"], ctx);
    } else {
      fail(ErrorKind::Validation, errc::schema_error, std::string(ctx) + ": node without a name");
    }
    std::optional<Position> pos;
    const bool has_x = node.contains("x") && !node["x"].is_null();
    const bool has_y = node.contains("y") && !node["y"].is_null();
    if (has_x != has_y) fail(ErrorKind::Validation, errc::schema_error, "node " + name + ": x and y go together");
    if (has_x) {
      if (!node["x"].is_number() || !node["y"].is_number()) {
        fail(ErrorKind::Validation, errc::schema_error, "node " + name + ": coordinates must be numbers");
      }
      pos = Position{node["x"].get<double>(), node["y"].get<double>()};
    }
    dag.add_node(name, pos);
    if (node.contains("tags") && node["tags"].is_array() && !node["tags"].empty()) {
      std::vector<std::string> tags;
      for (const auto& tag : node["tags"]) {
        if (!tag.is_string()) fail(ErrorKind::Validation, errc::schema_error, "tags must be strings");
        tags.push_back(tag.get<std::string>());
      }
      dag.set_tags(name, std::move(tags));
    }
  }

  const json* links = nullptr;
  if (doc.contains("links")) {
    links = &doc["links"];
  } else if (opts.lenient && doc.contains("edges")) {
    links = &doc["edges"];
  } else {
    fail(ErrorKind::Validation, errc::schema_error, std::string(ctx) + ": missing field \"links\"");
  }
  if (!links->is_array()) fail(ErrorKind::Validation, errc::schema_error, "links must be an array");
  for (const auto& link : *links) {
    const std::string s = node_key(detail::require(link, "source", ctx), ctx);
    const std::string t = node_key(detail::require(link, "target", ctx), ctx);
    if (!dag.has_node(normalize_node_name(s)) || !dag.has_node(normalize_node_name(t))) {
      fail(ErrorKind::Validation, errc::schema_error, "link " + s + " -> " + t + " references an unknown node");
    }
    dag.add_edge(s, t);
  }

  if (!opts.lenient) {
    auto role = [&](const char* key) -> std::optional<std::string> {
      if (!doc.contains(key) || doc[key].is_null()) return std::nullopt;
      if (!doc[key].is_string()) fail(ErrorKind::Validation, errc::schema_error, std::string(key) + " must be a string");
      return doc[key].get<std::string>();
    };
    if (auto t = role("treatment")) dag.set_treatment(*t);
    if (auto y = role("outcome")) dag.set_outcome(*y);
  }
  return dag;
}

}  // namespace

CausalDag dag_from_json(const json& doc) { return read_dag(doc, {.lenient = false}); }
CausalDag import_node_link(const json& doc) { return read_dag(doc, {.lenient = true}); }

json classification_to_json(const ClassificationResult& result) {
  json classes = json::object();
  for (const auto& [name, c] : result.classes) classes[name] = std::string(to_string(c));
  return json{{"classes", std::move(classes)},
              {"confounders", result.confounders},
              {"colliders", result.colliders},
              {"mediators", result.mediators},
              {"prognostics", result.prognostics}};
}

}  // namespace cwb
