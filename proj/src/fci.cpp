#include "nlpscm/fci.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <functional>
#include <set>

#include "nlpscm/error.hpp"

namespace nlpscm {

namespace {

constexpr std::size_t kSmallGraph = 10;

class Locks {
 public:
  Locks(const std::vector<bool>& flags, std::size_t d) : flags_(flags), d_(d) {}
  bool operator()(int a, int b) const {
    return !flags_.empty() && flags_[static_cast<std::size_t>(a) * d_ + static_cast<std::size_t>(b)];
  }

 private:
  const std::vector<bool>& flags_;
  std::size_t d_;
};

// Calls f on every k-subset of pool in lexicographic order; stops when f returns true.
bool for_each_subset(const std::vector<int>& pool, std::size_t k, const std::function<bool(const std::vector<int>&)>& f) {
  if (k > pool.size()) return false;
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  std::vector<int> subset(k);
  while (true) {
    for (std::size_t i = 0; i < k; ++i) subset[i] = pool[idx[i]];
    if (f(subset)) return true;
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == pool.size() - k + (i - 1)) --i;
    if (i == 0) return false;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

std::vector<int> without(std::vector<int> v, int a, int b) {
  std::erase_if(v, [a, b](int x) { return x == a || x == b; });
  return v;
}

struct Orienter {
  Pag& g;
  Locks locked;
  std::size_t changes = 0;

  bool set(int at, int other, Mark m) {
    if (locked(at, other) || g.has_mark(at, other, m)) return false;
    g.set_mark(at, other, m);
    ++changes;
    return true;
  }
  bool is(int at, int other, Mark m) const { return g.has_mark(at, other, m); }
  int size() const { return static_cast<int>(g.size()); }
};

// Edge a-b may lie on a potentially directed path from a to b.
bool potentially_directed(const Pag& g, int a, int b) {
  return g.adjacent(a, b) && !g.has_mark(a, b, Mark::Arrow) && !g.has_mark(b, a, Mark::Tail);
}

// Uncovered path start, first, ..., target whose edges satisfy `ok`. The edge
// start-first must satisfy it too.
bool uncovered_path(const Pag& g, int start, int first, int target, const std::function<bool(int, int)>& ok,
                    const std::function<bool(const std::vector<int>&)>& accept) {
  if (!ok(start, first)) return false;
  std::vector<int> path{start, first};
  std::vector<bool> on_path(g.size(), false);
  on_path[static_cast<std::size_t>(start)] = on_path[static_cast<std::size_t>(first)] = true;
  std::function<bool()> dfs = [&]() -> bool {
    const int cur = path.back();
    if (cur == target) return accept(path);
    const int prev = path[path.size() - 2];
    for (int next : g.neighbors(cur)) {
      if (on_path[static_cast<std::size_t>(next)] || g.adjacent(prev, next) || !ok(cur, next)) continue;
      path.push_back(next);
      on_path[static_cast<std::size_t>(next)] = true;
      const bool found = dfs();
      on_path[static_cast<std::size_t>(next)] = false;
      path.pop_back();
      if (found) return true;
    }
    return false;
  };
  return dfs();
}

bool rule1(Orienter& o) {
  bool any = false;
  for (int b = 0; b < o.size(); ++b) {
    const auto nb = o.g.neighbors(b);
    for (int a : nb) {
      if (!o.is(b, a, Mark::Arrow)) continue;
      for (int c : nb) {
        if (c == a || o.g.adjacent(a, c) || !o.is(b, c, Mark::Circle) || o.locked(b, c)) continue;
        any |= o.set(b, c, Mark::Tail);
        any |= o.set(c, b, Mark::Arrow);
      }
    }
  }
  return any;
}

bool rule2(Orienter& o) {
  bool any = false;
  for (int a = 0; a < o.size(); ++a) {
    for (int c : o.g.neighbors(a)) {
      if (!o.is(c, a, Mark::Circle)) continue;
      for (int b : o.g.neighbors(a)) {
        if (b == c || !o.g.adjacent(b, c)) continue;
        const bool a_to_b = o.is(a, b, Mark::Tail) && o.is(b, a, Mark::Arrow);
        const bool b_into_c = o.is(c, b, Mark::Arrow);
        const bool a_into_b = o.is(b, a, Mark::Arrow);
        const bool b_to_c = o.is(b, c, Mark::Tail) && o.is(c, b, Mark::Arrow);
        if ((a_to_b && b_into_c) || (a_into_b && b_to_c)) {
          any |= o.set(c, a, Mark::Arrow);
          break;
        }
      }
    }
  }
  return any;
}

bool rule3(Orienter& o) {
  bool any = false;
  for (int b = 0; b < o.size(); ++b) {
    const auto nb = o.g.neighbors(b);
    for (std::size_t i = 0; i < nb.size(); ++i) {
      for (std::size_t j = i + 1; j < nb.size(); ++j) {
        const int a = nb[i];
        const int c = nb[j];
        if (o.g.adjacent(a, c) || !o.is(b, a, Mark::Arrow) || !o.is(b, c, Mark::Arrow)) continue;
        for (int d : nb) {
          if (d == a || d == c || !o.g.adjacent(d, a) || !o.g.adjacent(d, c)) continue;
          if (o.is(d, a, Mark::Circle) && o.is(d, c, Mark::Circle) && o.is(b, d, Mark::Circle)) {
            any |= o.set(b, d, Mark::Arrow);
          }
        }
      }
    }
  }
  return any;
}

// Discriminating paths <theta, ..., a, b, c> for b with b o-* c.
bool rule4(Orienter& o, const SepsetTable& sepsets) {
  bool any = false;
  const auto d = static_cast<std::size_t>(o.size());
  for (int b = 0; b < o.size(); ++b) {
    for (int c : o.g.neighbors(b)) {
      if (!o.is(b, c, Mark::Circle) || o.locked(b, c)) continue;
      for (int a : o.g.neighbors(b)) {
        if (a == c || !o.g.adjacent(a, c)) continue;
        if (!o.is(a, b, Mark::Arrow) || !o.is(a, c, Mark::Tail) || !o.is(c, a, Mark::Arrow)) continue;
        std::vector<bool> visited(d, false);
        visited[static_cast<std::size_t>(a)] = visited[static_cast<std::size_t>(b)] =
            visited[static_cast<std::size_t>(c)] = true;
        std::deque<int> queue{a};
        std::optional<int> theta;
        while (!queue.empty() && !theta) {
          const int v = queue.front();
          queue.pop_front();
          for (int t : o.g.neighbors(v)) {
            if (visited[static_cast<std::size_t>(t)] || !o.is(v, t, Mark::Arrow)) continue;
            if (!o.g.adjacent(t, c)) {
              theta = t;
              break;
            }
            if (o.is(t, v, Mark::Arrow) && o.is(t, c, Mark::Tail) && o.is(c, t, Mark::Arrow)) {
              visited[static_cast<std::size_t>(t)] = true;
              queue.push_back(t);
            }
          }
        }
        if (!theta) continue;
        const auto sep = sepsets.find(PairKey::of(*theta, c));
        if (sep == sepsets.end()) continue;
        if (std::find(sep->second.begin(), sep->second.end(), b) != sep->second.end()) {
          any |= o.set(b, c, Mark::Tail);
          any |= o.set(c, b, Mark::Arrow);
        } else {
          any |= o.set(b, a, Mark::Arrow);
          any |= o.set(b, c, Mark::Arrow);
          any |= o.set(c, b, Mark::Arrow);
        }
        break;
      }
    }
  }
  return any;
}

bool rule5(Orienter& o) {
  bool any = false;
  auto circle_edge = [&o](int x, int y) { return o.is(x, y, Mark::Circle) && o.is(y, x, Mark::Circle); };
  for (int a = 0; a < o.size(); ++a) {
    for (int b : o.g.neighbors(a)) {
      if (b < a || !circle_edge(a, b) || o.locked(a, b)) continue;
      for (int gamma : o.g.neighbors(a)) {
        if (gamma == b || o.g.adjacent(gamma, b)) continue;
        std::vector<int> found;
        const bool ok = uncovered_path(o.g, a, gamma, b, circle_edge, [&](const std::vector<int>& p) {
          if (p.size() < 4 || o.g.adjacent(p[p.size() - 2], a)) return false;
          found = p;
          return true;
        });
        if (!ok) continue;
        any |= o.set(a, b, Mark::Tail);
        any |= o.set(b, a, Mark::Tail);
        for (std::size_t i = 0; i + 1 < found.size(); ++i) {
          any |= o.set(found[i], found[i + 1], Mark::Tail);
          any |= o.set(found[i + 1], found[i], Mark::Tail);
        }
        break;
      }
    }
  }
  return any;
}

bool rule6_7(Orienter& o) {
  bool any = false;
  for (int b = 0; b < o.size(); ++b) {
    const auto nb = o.g.neighbors(b);
    for (int a : nb) {
      const bool undirected = o.is(a, b, Mark::Tail) && o.is(b, a, Mark::Tail);
      const bool tail_circle = o.is(a, b, Mark::Tail) && o.is(b, a, Mark::Circle);
      if (!undirected && !tail_circle) continue;
      for (int c : nb) {
        if (c == a || !o.is(b, c, Mark::Circle)) continue;
        if (undirected || !o.g.adjacent(a, c)) any |= o.set(b, c, Mark::Tail);
      }
    }
  }
  return any;
}

bool rule8_to_10(Orienter& o) {
  bool any = false;
  auto pd = [&o](int x, int y) { return potentially_directed(o.g, x, y); };
  auto directed = [&o](int x, int y) { return o.is(x, y, Mark::Tail) && o.is(y, x, Mark::Arrow); };
  for (int a = 0; a < o.size(); ++a) {
    for (int c : o.g.neighbors(a)) {
      if (!o.is(a, c, Mark::Circle) || !o.is(c, a, Mark::Arrow) || o.locked(a, c)) continue;
      bool orient = false;
      // R8
      for (int b : o.g.neighbors(a)) {
        if (b == c || !o.g.adjacent(b, c)) continue;
        const bool a_tail = o.is(a, b, Mark::Tail) && (o.is(b, a, Mark::Arrow) || o.is(b, a, Mark::Circle));
        if (a_tail && directed(b, c)) {
          orient = true;
          break;
        }
      }
      // R9
      for (int b : o.g.neighbors(a)) {
        if (orient) break;
        if (b == c || o.g.adjacent(b, c)) continue;
        orient = uncovered_path(o.g, a, b, c, pd, [](const std::vector<int>&) { return true; });
      }
      // R10
      if (!orient) {
        std::vector<int> parents;
        for (int p : o.g.neighbors(c)) {
          if (p != a && directed(p, c)) parents.push_back(p);
        }
        auto firsts = [&](int target) {
          std::vector<int> out;
          for (int mu : o.g.neighbors(a)) {
            if (mu == c) continue;
            if (uncovered_path(o.g, a, mu, target, pd, [](const std::vector<int>&) { return true; })) out.push_back(mu);
          }
          return out;
        };
        for (std::size_t i = 0; i < parents.size() && !orient; ++i) {
          for (std::size_t j = i + 1; j < parents.size() && !orient; ++j) {
            const auto mus = firsts(parents[i]);
            const auto omegas = firsts(parents[j]);
            for (int mu : mus) {
              for (int omega : omegas) {
                if (mu != omega && !o.g.adjacent(mu, omega)) orient = true;
              }
            }
          }
        }
      }
      if (orient) any |= o.set(a, c, Mark::Tail);
    }
  }
  return any;
}

std::vector<std::vector<int>> possible_dsep_sets(const Pag& g) {
  const int d = static_cast<int>(g.size());
  std::vector<std::vector<int>> out(static_cast<std::size_t>(d));
  for (int x = 0; x < d; ++x) {
    std::vector<bool> member(static_cast<std::size_t>(d), false);
    std::set<std::pair<int, int>> seen;
    std::deque<std::pair<int, int>> queue;
    for (int v : g.neighbors(x)) {
      member[static_cast<std::size_t>(v)] = true;
      seen.emplace(x, v);
      queue.emplace_back(x, v);
    }
    while (!queue.empty()) {
      const auto [a, b] = queue.front();
      queue.pop_front();
      for (int c : g.neighbors(b)) {
        if (c == a || c == x) continue;
        const bool collider = g.has_mark(b, a, Mark::Arrow) && g.has_mark(b, c, Mark::Arrow);
        if (!collider && !g.adjacent(a, c)) continue;
        member[static_cast<std::size_t>(c)] = true;
        if (seen.emplace(b, c).second) queue.emplace_back(b, c);
      }
    }
    for (int v = 0; v < d; ++v) {
      if (member[static_cast<std::size_t>(v)]) out[static_cast<std::size_t>(x)].push_back(v);
    }
  }
  return out;
}

}  // namespace

std::size_t apply_orientation_rules(Pag& pag, const SepsetTable& sepsets, const std::vector<bool>& locked,
                                    bool extended) {
  Orienter o{pag, Locks(locked, pag.size())};
  // Each productive pass changes at least one of finitely many marks.
  const std::size_t max_passes = 4 * pag.size() * pag.size() + 4;
  for (std::size_t pass = 0; pass < max_passes; ++pass) {
    bool changed = false;
    changed |= rule1(o);
    changed |= rule2(o);
    changed |= rule3(o);
    changed |= rule4(o, sepsets);
    if (extended) {
      changed |= rule5(o);
      changed |= rule6_7(o);
      changed |= rule8_to_10(o);
    }
    if (!changed) break;
  }
  return o.changes;
}

FciResult fci_detailed(const CiTest& test, const BackgroundKnowledge& background, const FciConfig& cfg) {
  const auto& names = test.variables();
  const std::size_t d = names.size();
  for (const auto& [key, fact] : background.facts()) {
    if (key.lo < 0 || static_cast<std::size_t>(key.hi) >= d || key.lo == key.hi) {
      throw InvalidArgument("background fact references an unknown variable");
    }
  }
  int max_depth = cfg.max_depth.value_or(d <= kSmallGraph ? -1 : 3);
  if (max_depth < 0) max_depth = static_cast<int>(d);
  const bool use_pds = cfg.possible_dsep.value_or(d <= kSmallGraph);

  FciResult result;
  Pag& g = result.pag;
  g = Pag::complete(names);
  std::vector<bool> locked(d * d, false);
  auto pinned = [&](int a, int b) {
    const auto c = background.category(a, b);
    return c && *c != EdgeCategory::NoEdge;
  };
  auto assert_background = [&]() {
    for (const auto& [key, fact] : background.facts()) {
      if (fact.category == EdgeCategory::NoEdge) {
        g.remove_edge(key.lo, key.hi);
        continue;
      }
      g.set_category(key.lo, key.hi, fact.category);
      locked[static_cast<std::size_t>(key.lo) * d + static_cast<std::size_t>(key.hi)] = true;
      locked[static_cast<std::size_t>(key.hi) * d + static_cast<std::size_t>(key.lo)] = true;
    }
  };
  for (const auto& [key, fact] : background.facts()) {
    if (fact.category == EdgeCategory::NoEdge) g.remove_edge(key.lo, key.hi);
  }

  auto ci = [&](int x, int y, const std::vector<int>& z) {
    ++result.ci_calls;
    return test.test(x, y, z).independent;
  };

  // Skeleton, PC-stable: adjacency sets frozen per depth, removals committed after each level.
  for (int depth = 0; depth <= max_depth; ++depth) {
    std::vector<std::vector<int>> adj(d);
    bool any_large = false;
    for (std::size_t v = 0; v < d; ++v) {
      adj[v] = g.neighbors(static_cast<int>(v));
      if (adj[v].size() > static_cast<std::size_t>(depth)) any_large = true;
    }
    if (!any_large) break;
    std::vector<std::pair<PairKey, std::vector<int>>> removals;
    for (const auto& e : g.edges()) {
      if (pinned(e.lo, e.hi)) continue;
      std::optional<std::vector<int>> sep;
      std::set<std::vector<int>> tried;
      for (int side : {e.lo, e.hi}) {
        const auto pool = without(adj[static_cast<std::size_t>(side)], e.lo, e.hi);
        for_each_subset(pool, static_cast<std::size_t>(depth), [&](const std::vector<int>& s) {
          if (!tried.insert(s).second) return false;
          if (ci(e.lo, e.hi, s)) {
            sep = s;
            return true;
          }
          return false;
        });
        if (sep) break;
      }
      if (sep) removals.emplace_back(e, *sep);
    }
    for (auto& [key, sep] : removals) {
      g.remove_edge(key.lo, key.hi);
      result.sepsets[key] = std::move(sep);
    }
  }

  auto orient_colliders = [&]() {
    Orienter o{g, Locks(locked, d)};
    for (int b = 0; b < static_cast<int>(d); ++b) {
      const auto nb = g.neighbors(b);
      for (std::size_t i = 0; i < nb.size(); ++i) {
        for (std::size_t j = i + 1; j < nb.size(); ++j) {
          const int a = nb[i];
          const int c = nb[j];
          if (g.adjacent(a, c)) continue;
          const auto sep = result.sepsets.find(PairKey::of(a, c));
          if (sep == result.sepsets.end()) continue;
          if (std::find(sep->second.begin(), sep->second.end(), b) != sep->second.end()) continue;
          o.set(b, a, Mark::Arrow);
          o.set(b, c, Mark::Arrow);
        }
      }
    }
  };

  assert_background();
  orient_colliders();

  if (use_pds) {
    const auto pds = possible_dsep_sets(g);
    std::vector<std::pair<PairKey, std::vector<int>>> removals;
    for (const auto& e : g.edges()) {
      if (pinned(e.lo, e.hi)) continue;
      std::optional<std::vector<int>> sep;
      std::set<std::vector<int>> tried;
      for (int side : {e.lo, e.hi}) {
        const auto pool = without(pds[static_cast<std::size_t>(side)], e.lo, e.hi);
        const auto limit = std::min(pool.size(), static_cast<std::size_t>(max_depth));
        for (std::size_t k = 1; k <= limit && !sep; ++k) {
          for_each_subset(pool, k, [&](const std::vector<int>& s) {
            if (!tried.insert(s).second) return false;
            if (ci(e.lo, e.hi, s)) {
              sep = s;
              return true;
            }
            return false;
          });
        }
        if (sep) break;
      }
      if (sep) removals.emplace_back(e, *sep);
    }
    if (!removals.empty()) {
      for (auto& [key, sep] : removals) {
        g.remove_edge(key.lo, key.hi);
        result.sepsets[key] = std::move(sep);
      }
    }
    for (const auto& e : g.edges()) g.set_edge(e.lo, e.hi, Mark::Circle, Mark::Circle);
    assert_background();
    orient_colliders();
  }

  apply_orientation_rules(g, result.sepsets, locked, cfg.extended_rules);
  assert_background();
  return result;
}

Pag fci(const CiTest& test, const BackgroundKnowledge& background, const FciConfig& cfg) {
  return fci_detailed(test, background, cfg).pag;
}

// ---------------------------------------------------------------- variants

std::string_view to_string(FciVariant v) {
  switch (v) {
    case FciVariant::Cumulative: return "cumulative";
    case FciVariant::Vanilla: return "vanilla";
    case FciVariant::Iterative: return "iterative";
    case FciVariant::Heuristics: return "heuristics";
  }
  return "vanilla";
}

std::optional<FciVariant> variant_from_string(std::string_view text) {
  for (auto v : {FciVariant::Cumulative, FciVariant::Vanilla, FciVariant::Iterative, FciVariant::Heuristics}) {
    if (to_string(v) == text) return v;
  }
  return std::nullopt;
}

VariantRun run_fci_variant(FciVariant mode, const std::vector<BatchDataset>& batches, const FciConfig& cfg, int h,
                           const CiTestFactory& factory) {
  if (batches.empty()) throw InvalidArgument("FCI variant needs at least one batch");
  if (mode == FciVariant::Heuristics && h < 1) throw InvalidArgument("heuristics mode needs h >= 1");
  const CiTestFactory make = factory ? factory : [&cfg](const BatchDataset& b) { return make_data_test(b, cfg.alpha); };

  VariantRun run;
  std::vector<BatchDataset> seen;
  // Per pair, how often each category appeared in previous outputs.
  std::map<PairKey, std::array<int, kCategoryCount>> appearances;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const auto& batch = batches[i];
    if (batch.empty()) {
      run.warnings.push_back("batch " + std::to_string(i + 1) + " is empty; skipped");
      run.pags.push_back(run.pags.empty() ? Pag(batch.names()) : run.pags.back());
      continue;
    }
    BackgroundKnowledge background;
    std::unique_ptr<CiTest> test;
    switch (mode) {
      case FciVariant::Cumulative:
        seen.push_back(batch);
        test = make(concatenate(seen));
        break;
      case FciVariant::Vanilla:
        test = make(batch);
        break;
      case FciVariant::Iterative:
        if (!run.pags.empty()) {
          const Pag& prev = run.pags.back();
          for (const auto& e : prev.edges()) background.add(e.lo, e.hi, prev.category(e.lo, e.hi), static_cast<int>(i));
        }
        test = make(batch);
        break;
      case FciVariant::Heuristics:
        for (const auto& [key, counts] : appearances) {
          const auto best = std::max_element(counts.begin(), counts.end());
          if (*best >= h) {
            background.add(key.lo, key.hi, static_cast<EdgeCategory>(best - counts.begin()), static_cast<int>(i));
          }
        }
        test = make(batch);
        break;
    }
    Pag pag = fci(*test, background, cfg);
    for (const auto& e : pag.edges()) {
      auto& counts = appearances[e];
      counts[static_cast<std::size_t>(pag.category(e.lo, e.hi))] += 1;
    }
    run.pags.push_back(std::move(pag));
  }
  return run;
}

}  // namespace nlpscm
