#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace nlpscm {

/// Endpoint mark of a PAG edge. The enumerator order is the canonical order.
enum class Mark : std::uint8_t { Tail, Arrow, Circle };

/// Edge type between an ordered pair (A, B). The first seven enumerators are
/// the categories an expert may answer with; their order is the histogram bin
/// order and the promotion tie-break order.
enum class EdgeCategory : std::uint8_t {
  Directed,         // A -> B
  ReverseDirected,  // A <- B
  Bidirected,       // A <-> B
  PartialDirected,  // A o-> B
  ReversePartial,   // A <-o B
  Nondirected,      // A o-o B
  NoEdge,
  Undirected,       // A -- B
};

inline constexpr std::size_t kQueryableCategoryCount = 7;
inline constexpr std::size_t kCategoryCount = 8;

struct EdgeMarks {
  Mark at_a;
  Mark at_b;
  friend bool operator==(const EdgeMarks&, const EdgeMarks&) = default;
};

/// Classifies a mark pair. Tail/Circle combinations (A --o B) only arise from
/// the selection-bias rules and are projected onto Undirected.
EdgeCategory edge_category(Mark at_a, Mark at_b, bool present);

/// Marks of a category from A's point of view; nullopt for NoEdge.
std::optional<EdgeMarks> marks_of(EdgeCategory category);

/// The same relation seen from (B, A).
EdgeCategory reversed(EdgeCategory category);

bool is_queryable(EdgeCategory category);
std::string_view to_string(EdgeCategory category);
std::optional<EdgeCategory> category_from_string(std::string_view text);

/// Unordered variable pair keyed by (min index, max index).
struct PairKey {
  int lo = 0;
  int hi = 0;

  static PairKey of(int a, int b) { return a < b ? PairKey{a, b} : PairKey{b, a}; }
  friend auto operator<=>(const PairKey&, const PairKey&) = default;
};

/// Category of (a, b) re-expressed relative to the pair's (lo, hi) orientation.
inline EdgeCategory normalize(int a, int b, EdgeCategory category) {
  return a < b ? category : reversed(category);
}

/// Mixed graph with one endpoint mark per edge end.
class Pag {
 public:
  Pag() = default;
  explicit Pag(std::vector<std::string> variables);

  /// Complete graph with every edge o-o.
  static Pag complete(std::vector<std::string> variables);

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& variables() const { return names_; }
  int index_of(std::string_view name) const;

  bool adjacent(int a, int b) const { return slot(a, b) >= 0; }
  /// Mark at `at` on the edge between `at` and `other`.
  std::optional<Mark> mark(int at, int other) const;
  /// True when the edge exists and the mark at `at` equals `m`.
  bool has_mark(int at, int other, Mark m) const {
    const auto v = slot(other, at);
    return v >= 0 && static_cast<Mark>(v) == m;
  }

  void set_edge(int a, int b, Mark at_a, Mark at_b);
  void set_mark(int at, int other, Mark m);
  void remove_edge(int a, int b);

  EdgeCategory category(int a, int b) const;
  /// Rewrites the pair to the given category; NoEdge removes the edge.
  void set_category(int a, int b, EdgeCategory category);

  std::vector<int> neighbors(int a) const;
  std::vector<PairKey> edges() const;
  std::size_t edge_count() const;

  friend bool operator==(const Pag&, const Pag&) = default;

 private:
  void check(int a, int b) const;
  std::int8_t slot(int a, int b) const {
    return marks_[static_cast<std::size_t>(a) * names_.size() + static_cast<std::size_t>(b)];
  }
  std::int8_t& slot(int a, int b) {
    return marks_[static_cast<std::size_t>(a) * names_.size() + static_cast<std::size_t>(b)];
  }

  std::vector<std::string> names_;
  // marks_[a*d + b] is the mark at b on edge a-b, or -1 when not adjacent.
  std::vector<std::int8_t> marks_;
};

/// Directed acyclic graph with optional latent flags and edge weights.
class Dag {
 public:
  struct Edge {
    int from;
    int to;
    double weight;
  };

  Dag() = default;
  /// Throws InvalidGraph on self-loops, duplicates, or cycles.
  Dag(std::vector<std::string> variables, std::vector<Edge> edges, bool weighted,
      std::vector<bool> latent = {});

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& variables() const { return names_; }
  int index_of(std::string_view name) const;

  const std::vector<Edge>& edges() const { return edges_; }
  bool weighted() const { return weighted_; }
  bool has_edge(int from, int to) const;
  double weight(int from, int to) const;
  const std::vector<int>& parents(int v) const { return parents_[static_cast<std::size_t>(v)]; }
  const std::vector<int>& children(int v) const { return children_[static_cast<std::size_t>(v)]; }

  bool is_latent(int v) const { return latent_[static_cast<std::size_t>(v)]; }
  std::vector<int> latents() const;
  std::vector<int> observed() const;
  std::vector<std::string> observed_names() const;

  const std::vector<int>& topological_order() const { return topo_; }
  /// Descendants of v, including v.
  std::vector<bool> descendants(int v) const;
  /// Ancestors of the given nodes, including the nodes themselves.
  std::vector<bool> ancestors(std::span<const int> nodes) const;

  /// The DAG as an exactly-marked PAG over the observed variables. Each
  /// latent with two or more observed children contributes <-> between every
  /// pair of its children that is not already adjacent.
  Pag to_pag() const;

  /// Category of the observed pair (a, b) as an ideal expert would report it.
  EdgeCategory true_category(int a, int b) const;
  /// Latent that confounds the pair, if any.
  std::optional<int> confounder_of(int a, int b) const;

 private:
  std::vector<std::string> names_;
  std::vector<Edge> edges_;
  bool weighted_ = false;
  std::vector<bool> latent_;
  std::vector<std::vector<int>> parents_;
  std::vector<std::vector<int>> children_;
  std::vector<int> topo_;
};

/// Facts promoted into background knowledge, keyed by unordered pair. The
/// category is stored relative to the (lo, hi) orientation.
class BackgroundKnowledge {
 public:
  struct Fact {
    EdgeCategory category;
    int batch;
    friend bool operator==(const Fact&, const Fact&) = default;
  };

  /// Returns true if inserted, false if the same fact already exists. A
  /// conflicting category for an existing pair throws InvalidArgument.
  bool add(int a, int b, EdgeCategory category, int batch);
  bool contains(int a, int b) const { return facts_.count(PairKey::of(a, b)) > 0; }
  /// Category of the pair relative to (a, b).
  std::optional<EdgeCategory> category(int a, int b) const;
  const std::map<PairKey, Fact>& facts() const { return facts_; }
  std::size_t size() const { return facts_.size(); }
  bool empty() const { return facts_.empty(); }

  friend bool operator==(const BackgroundKnowledge&, const BackgroundKnowledge&) = default;

 private:
  std::map<PairKey, Fact> facts_;
};

/// True iff x and y are d-separated by z in the DAG.
bool d_separated(const Dag& dag, int x, int y, std::span<const int> z);
bool d_separated(const Dag& dag, std::string_view x, std::string_view y,
                 const std::vector<std::string>& z);

/// Text format: an optional `nodes` line followed by one `A <mark><mark> B`
/// line per edge, in lexicographic pair order.
std::string serialize_pag(const Pag& pag);
Pag parse_pag(std::string_view text);

/// DAG fixture JSON: {"variables": [...], "edges": [[src, dst, weight?]], "latents": [...]}.
nlohmann::ordered_json dag_to_json(const Dag& dag);
Dag dag_from_json(const nlohmann::json& j);

}  // namespace nlpscm
