#include "nlpscm/graph.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <sstream>

#include "nlpscm/error.hpp"

namespace nlpscm {

namespace {

struct CategoryInfo {
  EdgeCategory category;
  std::string_view name;
};

constexpr std::array<CategoryInfo, kCategoryCount> kCategoryNames{{
    {EdgeCategory::Directed, "directed"},
    {EdgeCategory::ReverseDirected, "reverse_directed"},
    {EdgeCategory::Bidirected, "bidirected"},
    {EdgeCategory::PartialDirected, "partial_directed"},
    {EdgeCategory::ReversePartial, "reverse_partial"},
    {EdgeCategory::Nondirected, "nondirected"},
    {EdgeCategory::NoEdge, "no_edge"},
    {EdgeCategory::Undirected, "undirected"},
}};

int find_name(const std::vector<std::string>& names, std::string_view name) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw UnknownVariable(std::string(name));
  return static_cast<int>(it - names.begin());
}

char left_glyph(Mark m) {
  switch (m) {
    case Mark::Tail: return '-';
    case Mark::Arrow: return '<';
    case Mark::Circle: return 'o';
  }
  return '?';
}

char right_glyph(Mark m) {
  switch (m) {
    case Mark::Tail: return '-';
    case Mark::Arrow: return '>';
    case Mark::Circle: return 'o';
  }
  return '?';
}

std::optional<Mark> parse_left(char c) {
  switch (c) {
    case '-': return Mark::Tail;
    case '<': return Mark::Arrow;
    case 'o': return Mark::Circle;
    default: return std::nullopt;
  }
}

std::optional<Mark> parse_right(char c) {
  switch (c) {
    case '-': return Mark::Tail;
    case '>': return Mark::Arrow;
    case 'o': return Mark::Circle;
    default: return std::nullopt;
  }
}

}  // namespace

EdgeCategory edge_category(Mark at_a, Mark at_b, bool present) {
  if (!present) return EdgeCategory::NoEdge;
  using M = Mark;
  if (at_a == M::Tail && at_b == M::Arrow) return EdgeCategory::Directed;
  if (at_a == M::Arrow && at_b == M::Tail) return EdgeCategory::ReverseDirected;
  if (at_a == M::Arrow && at_b == M::Arrow) return EdgeCategory::Bidirected;
  if (at_a == M::Circle && at_b == M::Arrow) return EdgeCategory::PartialDirected;
  if (at_a == M::Arrow && at_b == M::Circle) return EdgeCategory::ReversePartial;
  if (at_a == M::Circle && at_b == M::Circle) return EdgeCategory::Nondirected;
  return EdgeCategory::Undirected;
}

std::optional<EdgeMarks> marks_of(EdgeCategory category) {
  using M = Mark;
  switch (category) {
    case EdgeCategory::Directed: return EdgeMarks{M::Tail, M::Arrow};
    case EdgeCategory::ReverseDirected: return EdgeMarks{M::Arrow, M::Tail};
    case EdgeCategory::Bidirected: return EdgeMarks{M::Arrow, M::Arrow};
    case EdgeCategory::PartialDirected: return EdgeMarks{M::Circle, M::Arrow};
    case EdgeCategory::ReversePartial: return EdgeMarks{M::Arrow, M::Circle};
    case EdgeCategory::Nondirected: return EdgeMarks{M::Circle, M::Circle};
    case EdgeCategory::Undirected: return EdgeMarks{M::Tail, M::Tail};
    case EdgeCategory::NoEdge: return std::nullopt;
  }
  return std::nullopt;
}

EdgeCategory reversed(EdgeCategory category) {
  switch (category) {
    case EdgeCategory::Directed: return EdgeCategory::ReverseDirected;
    case EdgeCategory::ReverseDirected: return EdgeCategory::Directed;
    case EdgeCategory::PartialDirected: return EdgeCategory::ReversePartial;
    case EdgeCategory::ReversePartial: return EdgeCategory::PartialDirected;
    default: return category;
  }
}

bool is_queryable(EdgeCategory category) { return static_cast<std::size_t>(category) < kQueryableCategoryCount; }

std::string_view to_string(EdgeCategory category) {
  return kCategoryNames[static_cast<std::size_t>(category)].name;
}

std::optional<EdgeCategory> category_from_string(std::string_view text) {
  for (const auto& info : kCategoryNames) {
    if (info.name == text) return info.category;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- Pag

Pag::Pag(std::vector<std::string> variables) : names_(std::move(variables)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    for (std::size_t j = i + 1; j < names_.size(); ++j) {
      if (names_[i] == names_[j]) throw InvalidGraph("duplicate variable name: " + names_[i]);
    }
  }
  marks_.assign(names_.size() * names_.size(), -1);
}

Pag Pag::complete(std::vector<std::string> variables) {
  Pag g(std::move(variables));
  const int d = static_cast<int>(g.size());
  for (int a = 0; a < d; ++a) {
    for (int b = a + 1; b < d; ++b) g.set_edge(a, b, Mark::Circle, Mark::Circle);
  }
  return g;
}

int Pag::index_of(std::string_view name) const { return find_name(names_, name); }

void Pag::check(int a, int b) const {
  const int d = static_cast<int>(names_.size());
  if (a < 0 || b < 0 || a >= d || b >= d) throw InvalidArgument("variable index out of range");
  if (a == b) throw InvalidGraph("self-loop on " + names_[static_cast<std::size_t>(a)]);
}

std::optional<Mark> Pag::mark(int at, int other) const {
  const auto v = slot(other, at);
  if (v < 0) return std::nullopt;
  return static_cast<Mark>(v);
}

void Pag::set_edge(int a, int b, Mark at_a, Mark at_b) {
  check(a, b);
  slot(b, a) = static_cast<std::int8_t>(at_a);
  slot(a, b) = static_cast<std::int8_t>(at_b);
}

void Pag::set_mark(int at, int other, Mark m) {
  check(at, other);
  if (slot(other, at) < 0) throw InvalidArgument("set_mark on non-adjacent pair");
  slot(other, at) = static_cast<std::int8_t>(m);
}

void Pag::remove_edge(int a, int b) {
  check(a, b);
  slot(a, b) = -1;
  slot(b, a) = -1;
}

EdgeCategory Pag::category(int a, int b) const {
  check(a, b);
  if (!adjacent(a, b)) return EdgeCategory::NoEdge;
  return edge_category(*mark(a, b), *mark(b, a), true);
}

void Pag::set_category(int a, int b, EdgeCategory category) {
  const auto marks = marks_of(category);
  if (!marks) {
    remove_edge(a, b);
    return;
  }
  set_edge(a, b, marks->at_a, marks->at_b);
}

std::vector<int> Pag::neighbors(int a) const {
  std::vector<int> out;
  for (int b = 0; b < static_cast<int>(names_.size()); ++b) {
    if (b != a && adjacent(a, b)) out.push_back(b);
  }
  return out;
}

std::vector<PairKey> Pag::edges() const {
  std::vector<PairKey> out;
  const int d = static_cast<int>(names_.size());
  for (int a = 0; a < d; ++a) {
    for (int b = a + 1; b < d; ++b) {
      if (adjacent(a, b)) out.push_back({a, b});
    }
  }
  return out;
}

std::size_t Pag::edge_count() const { return edges().size(); }

// ---------------------------------------------------------------- Dag

Dag::Dag(std::vector<std::string> variables, std::vector<Edge> edges, bool weighted, std::vector<bool> latent)
    : names_(std::move(variables)), edges_(std::move(edges)), weighted_(weighted), latent_(std::move(latent)) {
  const std::size_t d = names_.size();
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      if (names_[i] == names_[j]) throw InvalidGraph("duplicate variable name: " + names_[i]);
    }
  }
  if (latent_.empty()) latent_.assign(d, false);
  if (latent_.size() != d) throw InvalidGraph("latent flag count does not match variable count");
  parents_.assign(d, {});
  children_.assign(d, {});
  for (const auto& e : edges_) {
    if (e.from < 0 || e.to < 0 || static_cast<std::size_t>(e.from) >= d || static_cast<std::size_t>(e.to) >= d) {
      throw InvalidGraph("edge endpoint out of range");
    }
    if (e.from == e.to) throw InvalidGraph("self-loop on " + names_[static_cast<std::size_t>(e.from)]);
    auto& ch = children_[static_cast<std::size_t>(e.from)];
    if (std::find(ch.begin(), ch.end(), e.to) != ch.end()) {
      throw InvalidGraph("duplicate edge " + names_[static_cast<std::size_t>(e.from)] + " -> " +
                         names_[static_cast<std::size_t>(e.to)]);
    }
    ch.push_back(e.to);
    parents_[static_cast<std::size_t>(e.to)].push_back(e.from);
  }
  for (auto& p : parents_) std::sort(p.begin(), p.end());
  for (auto& c : children_) std::sort(c.begin(), c.end());

  // Kahn's algorithm, smallest index first for a deterministic order.
  std::vector<std::size_t> indegree(d);
  for (std::size_t v = 0; v < d; ++v) indegree[v] = parents_[v].size();
  std::vector<int> ready;
  for (std::size_t v = 0; v < d; ++v) {
    if (indegree[v] == 0) ready.push_back(static_cast<int>(v));
  }
  while (!ready.empty()) {
    const auto it = std::min_element(ready.begin(), ready.end());
    const int v = *it;
    ready.erase(it);
    topo_.push_back(v);
    for (int c : children_[static_cast<std::size_t>(v)]) {
      if (--indegree[static_cast<std::size_t>(c)] == 0) ready.push_back(c);
    }
  }
  if (topo_.size() != d) throw InvalidGraph("edge set contains a cycle");
}

int Dag::index_of(std::string_view name) const { return find_name(names_, name); }

bool Dag::has_edge(int from, int to) const {
  const auto& ch = children_[static_cast<std::size_t>(from)];
  return std::binary_search(ch.begin(), ch.end(), to);
}

double Dag::weight(int from, int to) const {
  for (const auto& e : edges_) {
    if (e.from == from && e.to == to) return e.weight;
  }
  throw InvalidArgument("no edge " + names_[static_cast<std::size_t>(from)] + " -> " +
                        names_[static_cast<std::size_t>(to)]);
}

std::vector<int> Dag::latents() const {
  std::vector<int> out;
  for (std::size_t v = 0; v < names_.size(); ++v) {
    if (latent_[v]) out.push_back(static_cast<int>(v));
  }
  return out;
}

std::vector<int> Dag::observed() const {
  std::vector<int> out;
  for (std::size_t v = 0; v < names_.size(); ++v) {
    if (!latent_[v]) out.push_back(static_cast<int>(v));
  }
  return out;
}

std::vector<std::string> Dag::observed_names() const {
  std::vector<std::string> out;
  for (int v : observed()) out.push_back(names_[static_cast<std::size_t>(v)]);
  return out;
}

std::vector<bool> Dag::descendants(int v) const {
  std::vector<bool> seen(names_.size(), false);
  std::vector<int> stack{v};
  seen[static_cast<std::size_t>(v)] = true;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (int c : children_[static_cast<std::size_t>(u)]) {
      if (!seen[static_cast<std::size_t>(c)]) {
        seen[static_cast<std::size_t>(c)] = true;
        stack.push_back(c);
      }
    }
  }
  return seen;
}

std::vector<bool> Dag::ancestors(std::span<const int> nodes) const {
  std::vector<bool> seen(names_.size(), false);
  std::vector<int> stack;
  for (int v : nodes) {
    if (!seen[static_cast<std::size_t>(v)]) {
      seen[static_cast<std::size_t>(v)] = true;
      stack.push_back(v);
    }
  }
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (int p : parents_[static_cast<std::size_t>(u)]) {
      if (!seen[static_cast<std::size_t>(p)]) {
        seen[static_cast<std::size_t>(p)] = true;
        stack.push_back(p);
      }
    }
  }
  return seen;
}

std::optional<int> Dag::confounder_of(int a, int b) const {
  for (int l : latents()) {
    const auto& ch = children_[static_cast<std::size_t>(l)];
    if (std::binary_search(ch.begin(), ch.end(), a) && std::binary_search(ch.begin(), ch.end(), b)) return l;
  }
  return std::nullopt;
}

EdgeCategory Dag::true_category(int a, int b) const {
  if (has_edge(a, b)) return EdgeCategory::Directed;
  if (has_edge(b, a)) return EdgeCategory::ReverseDirected;
  if (confounder_of(a, b)) return EdgeCategory::Bidirected;
  return EdgeCategory::NoEdge;
}

Pag Dag::to_pag() const {
  const auto obs = observed();
  Pag g(observed_names());
  const int d = static_cast<int>(obs.size());
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      g.set_category(i, j, true_category(obs[static_cast<std::size_t>(i)], obs[static_cast<std::size_t>(j)]));
    }
  }
  return g;
}

// ---------------------------------------------------------------- BackgroundKnowledge

bool BackgroundKnowledge::add(int a, int b, EdgeCategory category, int batch) {
  if (a == b) throw InvalidArgument("background fact on a self-pair");
  const auto key = PairKey::of(a, b);
  const auto normalized = normalize(a, b, category);
  const auto it = facts_.find(key);
  if (it != facts_.end()) {
    if (it->second.category != normalized) throw InvalidArgument("conflicting background fact for pair");
    return false;
  }
  facts_.emplace(key, Fact{normalized, batch});
  return true;
}

std::optional<EdgeCategory> BackgroundKnowledge::category(int a, int b) const {
  const auto it = facts_.find(PairKey::of(a, b));
  if (it == facts_.end()) return std::nullopt;
  return normalize(a, b, it->second.category);
}

// ---------------------------------------------------------------- d-separation

bool d_separated(const Dag& dag, int x, int y, std::span<const int> z) {
  const int d = static_cast<int>(dag.size());
  auto in_range = [d](int v) { return v >= 0 && v < d; };
  if (!in_range(x) || !in_range(y)) throw InvalidArgument("d_separated: index out of range");
  if (x == y) throw InvalidArgument("d_separated: x and y must differ");
  std::vector<bool> conditioned(static_cast<std::size_t>(d), false);
  for (int v : z) {
    if (!in_range(v)) throw InvalidArgument("d_separated: index out of range");
    if (v == x || v == y) throw InvalidArgument("d_separated: x and y may not be conditioned on");
    conditioned[static_cast<std::size_t>(v)] = true;
  }
  const auto anc = dag.ancestors(z);

  // Reachability over (node, direction): `up` means the trail arrives from a child.
  struct State {
    int node;
    bool up;
  };
  std::vector<std::array<bool, 2>> visited(static_cast<std::size_t>(d), {false, false});
  std::deque<State> queue{{x, true}};
  while (!queue.empty()) {
    const auto [v, up] = queue.front();
    queue.pop_front();
    auto& seen = visited[static_cast<std::size_t>(v)][up ? 1 : 0];
    if (seen) continue;
    seen = true;
    const bool blocked_here = conditioned[static_cast<std::size_t>(v)];
    if (v == y) return false;
    if (up && !blocked_here) {
      for (int p : dag.parents(v)) queue.push_back({p, true});
      for (int c : dag.children(v)) queue.push_back({c, false});
    } else if (!up) {
      if (!blocked_here) {
        for (int c : dag.children(v)) queue.push_back({c, false});
      }
      if (anc[static_cast<std::size_t>(v)]) {
        for (int p : dag.parents(v)) queue.push_back({p, true});
      }
    }
  }
  return true;
}

bool d_separated(const Dag& dag, std::string_view x, std::string_view y, const std::vector<std::string>& z) {
  std::vector<int> zi;
  zi.reserve(z.size());
  for (const auto& name : z) zi.push_back(dag.index_of(name));
  return d_separated(dag, dag.index_of(x), dag.index_of(y), zi);
}

// ---------------------------------------------------------------- text format

std::string serialize_pag(const Pag& pag) {
  std::ostringstream out;
  out << "nodes";
  for (const auto& n : pag.variables()) out << ' ' << n;
  out << '\n';

  struct Line {
    std::string first;
    std::string second;
    char left;
    char right;
  };
  std::vector<Line> lines;
  const auto& names = pag.variables();
  for (const auto& e : pag.edges()) {
    int a = e.lo;
    int b = e.hi;
    if (names[static_cast<std::size_t>(b)] < names[static_cast<std::size_t>(a)]) std::swap(a, b);
    lines.push_back({names[static_cast<std::size_t>(a)], names[static_cast<std::size_t>(b)],
                     left_glyph(*pag.mark(a, b)), right_glyph(*pag.mark(b, a))});
  }
  std::sort(lines.begin(), lines.end(),
            [](const Line& l, const Line& r) { return std::tie(l.first, l.second) < std::tie(r.first, r.second); });
  for (const auto& l : lines) out << l.first << ' ' << l.left << l.right << ' ' << l.second << '\n';
  return out.str();
}

Pag parse_pag(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::vector<std::string>> declared;
  struct Parsed {
    std::string a;
    std::string b;
    Mark at_a;
    Mark at_b;
    std::size_t line;
  };
  std::vector<Parsed> edges;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream tokens(line);
    std::vector<std::string> parts;
    for (std::string t; tokens >> t;) parts.push_back(t);
    if (parts.empty() || parts.front().front() == '#') continue;
    if (parts.front() == "nodes") {
      if (declared) throw ParseError("duplicate nodes line", line_no);
      if (!edges.empty()) throw ParseError("nodes line must precede edges", line_no);
      declared.emplace(parts.begin() + 1, parts.end());
      continue;
    }
    if (parts.size() != 3) throw ParseError("expected `A <mark><mark> B`", line_no);
    const auto& glyph = parts[1];
    if (glyph.size() != 2) throw ParseError("edge glyph must be two characters: " + glyph, line_no);
    const auto left = parse_left(glyph[0]);
    const auto right = parse_right(glyph[1]);
    if (!left || !right) throw ParseError("invalid edge glyph: " + glyph, line_no);
    if (parts[0] == parts[2]) throw ParseError("self-loop on " + parts[0], line_no);
    edges.push_back({parts[0], parts[2], *left, *right, line_no});
  }

  std::vector<std::string> names;
  if (declared) {
    names = *declared;
  } else {
    for (const auto& e : edges) {
      for (const auto* n : {&e.a, &e.b}) {
        if (std::find(names.begin(), names.end(), *n) == names.end()) names.push_back(*n);
      }
    }
    std::sort(names.begin(), names.end());
  }
  Pag g;
  try {
    g = Pag(names);
  } catch (const InvalidGraph& err) {
    throw ParseError(err.what(), 1);
  }
  for (const auto& e : edges) {
    const auto ia = std::find(names.begin(), names.end(), e.a);
    const auto ib = std::find(names.begin(), names.end(), e.b);
    if (ia == names.end() || ib == names.end()) throw ParseError("edge references undeclared variable", e.line);
    const int a = static_cast<int>(ia - names.begin());
    const int b = static_cast<int>(ib - names.begin());
    if (g.adjacent(a, b)) throw ParseError("duplicate edge " + e.a + " " + e.b, e.line);
    g.set_edge(a, b, e.at_a, e.at_b);
  }
  return g;
}

// ---------------------------------------------------------------- JSON

nlohmann::ordered_json dag_to_json(const Dag& dag) {
  nlohmann::ordered_json j;
  j["variables"] = dag.variables();
  auto edges = nlohmann::ordered_json::array();
  for (const auto& e : dag.edges()) {
    auto row = nlohmann::ordered_json::array({dag.variables()[static_cast<std::size_t>(e.from)],
                                              dag.variables()[static_cast<std::size_t>(e.to)]});
    if (dag.weighted()) row.push_back(e.weight);
    edges.push_back(std::move(row));
  }
  j["edges"] = std::move(edges);
  auto latents = nlohmann::ordered_json::array();
  for (int l : dag.latents()) latents.push_back(dag.variables()[static_cast<std::size_t>(l)]);
  j["latents"] = std::move(latents);
  return j;
}

Dag dag_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("variables") || !j.contains("edges")) {
    throw InvalidGraph("DAG JSON needs `variables` and `edges`");
  }
  const auto names = j.at("variables").get<std::vector<std::string>>();
  auto lookup = [&](const std::string& n) { return find_name(names, n); };
  std::vector<Dag::Edge> edges;
  std::optional<bool> weighted;
  for (const auto& row : j.at("edges")) {
    if (!row.is_array() || row.size() < 2 || row.size() > 3) throw InvalidGraph("edge entries are [src, dst, weight?]");
    const bool has_weight = row.size() == 3;
    if (weighted && *weighted != has_weight) throw InvalidGraph("weights must be given for all edges or none");
    weighted = has_weight;
    edges.push_back({lookup(row[0].get<std::string>()), lookup(row[1].get<std::string>()),
                     has_weight ? row[2].get<double>() : 0.0});
  }
  std::vector<bool> latent(names.size(), false);
  if (j.contains("latents")) {
    for (const auto& n : j.at("latents")) latent[static_cast<std::size_t>(lookup(n.get<std::string>()))] = true;
  }
  return Dag(names, std::move(edges), weighted.value_or(false), std::move(latent));
}

}  // namespace nlpscm
