#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "nlpscm/error.hpp"
#include "nlpscm/graph.hpp"
#include "nlpscm/sem.hpp"

using namespace nlpscm;
using testing::make_dag;
using testing::pag_of;

TEST_CASE("edge categories round-trip through marks") {
  for (std::size_t i = 0; i < kCategoryCount; ++i) {
    const auto c = static_cast<EdgeCategory>(i);
    const auto m = marks_of(c);
    if (c == EdgeCategory::NoEdge) {
      CHECK_FALSE(m);
      continue;
    }
    REQUIRE(m);
    CHECK(edge_category(m->at_a, m->at_b, true) == c);
    CHECK(reversed(reversed(c)) == c);
    CHECK(category_from_string(to_string(c)) == c);
  }
  CHECK(edge_category(Mark::Tail, Mark::Arrow, false) == EdgeCategory::NoEdge);
  CHECK(reversed(EdgeCategory::Directed) == EdgeCategory::ReverseDirected);
  CHECK(reversed(EdgeCategory::PartialDirected) == EdgeCategory::ReversePartial);
  CHECK(reversed(EdgeCategory::Bidirected) == EdgeCategory::Bidirected);
  CHECK(edge_category(Mark::Tail, Mark::Circle, true) == EdgeCategory::Undirected);
  CHECK_FALSE(is_queryable(EdgeCategory::Undirected));
  CHECK(is_queryable(EdgeCategory::NoEdge));
}

TEST_CASE("pag marks and categories") {
  Pag g = Pag::complete({"A", "B", "C"});
  CHECK(g.edge_count() == 3);
  CHECK(g.category(0, 1) == EdgeCategory::Nondirected);
  g.set_category(0, 1, EdgeCategory::Directed);
  CHECK(g.has_mark(1, 0, Mark::Arrow));
  CHECK(g.has_mark(0, 1, Mark::Tail));
  CHECK(g.category(1, 0) == EdgeCategory::ReverseDirected);
  g.set_mark(1, 2, Mark::Arrow);
  CHECK(g.category(2, 1) == EdgeCategory::PartialDirected);
  g.set_category(0, 2, EdgeCategory::NoEdge);
  CHECK_FALSE(g.adjacent(0, 2));
  CHECK(g.neighbors(1) == std::vector<int>{0, 2});
  CHECK_THROWS_AS(g.set_edge(1, 1, Mark::Tail, Mark::Tail), InvalidGraph);
  CHECK_THROWS_AS(g.index_of("Z"), UnknownVariable);
}

TEST_CASE("dag rejects cycles and duplicates") {
  CHECK_THROWS_AS(make_dag({"A", "B"}, {{"A", "B"}, {"B", "A"}}), InvalidGraph);
  CHECK_THROWS_AS(make_dag({"A", "B"}, {{"A", "B"}, {"A", "B"}}), InvalidGraph);
  CHECK_THROWS_AS(make_dag({"A"}, {{"A", "A"}}), InvalidGraph);
}

TEST_CASE("dag to exact pag keeps orientation and adds bidirected for latents") {
  const auto d = make_dag({"L", "A", "B", "C"}, {{"L", "A"}, {"L", "B"}, {"A", "C"}}, {"L"});
  const auto p = d.to_pag();
  CHECK(p.variables() == std::vector<std::string>{"A", "B", "C"});
  CHECK(p.category(0, 1) == EdgeCategory::Bidirected);
  CHECK(p.category(0, 2) == EdgeCategory::Directed);
  CHECK_FALSE(p.adjacent(1, 2));
  CHECK(d.true_category(1, 2) == EdgeCategory::Bidirected);
  CHECK(d.confounder_of(1, 2) == 0);
}

TEST_CASE("background knowledge normalizes orientation") {
  BackgroundKnowledge b;
  CHECK(b.add(2, 1, EdgeCategory::Directed, 1));
  CHECK(b.category(1, 2) == EdgeCategory::ReverseDirected);
  CHECK(b.category(2, 1) == EdgeCategory::Directed);
  CHECK_FALSE(b.add(1, 2, EdgeCategory::ReverseDirected, 2));
  CHECK_THROWS_AS(b.add(1, 2, EdgeCategory::Directed, 2), InvalidArgument);
  CHECK(b.facts().at(PairKey::of(1, 2)).batch == 1);
}

TEST_CASE("d-separation on textbook graphs") {
  // A -> C <- B, C -> D
  const auto d = make_dag({"A", "B", "C", "D"}, {{"A", "C"}, {"B", "C"}, {"C", "D"}});
  CHECK(d_separated(d, "A", "B", {}));
  CHECK_FALSE(d_separated(d, "A", "B", {"C"}));
  CHECK_FALSE(d_separated(d, "A", "B", {"D"}));
  CHECK(d_separated(d, "A", "D", {"C"}));
  CHECK_FALSE(d_separated(d, "A", "D", {}));
}

TEST_CASE("d-separation agrees with path enumeration on random graphs") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 3 + trial % 5;
    const auto g = oracle::random_dag(n, 0.4, rng);
    const auto d = testing::to_dag(g);
    std::bernoulli_distribution pick(0.3);
    for (int x = 0; x < n; ++x) {
      for (int y = x + 1; y < n; ++y) {
        std::vector<int> z;
        for (int v = 0; v < n; ++v) {
          if (v != x && v != y && pick(rng)) z.push_back(v);
        }
        CHECK(d_separated(d, x, y, z) == oracle::d_separated(g, x, y, z));
      }
    }
  }
}

TEST_CASE("pag text format round-trips") {
  const auto g = pag_of({"A", "B", "C", "D"}, "A -> B\nB <> C\nC o> D\nA oo D\n");
  const auto text = serialize_pag(g);
  CHECK(parse_pag(text) == g);
  CHECK(text == "nodes A B C D\nA -> B\nA oo D\nB <> C\nC o> D\n");
}

TEST_CASE("pag parser reports line numbers") {
  try {
    parse_pag("nodes A B\nA -> B\nA ?? B\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(parse_pag("A -> A\n"), ParseError);
  CHECK_THROWS_AS(parse_pag("A >> B\n"), ParseError);
}

TEST_CASE("dag json round-trips with weights and latents") {
  const auto spec = fixture("wine_synth");
  const auto j = dag_to_json(spec.dag);
  const auto back = dag_from_json(j);
  CHECK(back.variables() == spec.dag.variables());
  CHECK(back.latents() == spec.dag.latents());
  CHECK(back.weight(back.index_of("residual_sugar"), back.index_of("density")) == doctest::Approx(0.5));
}
