#include "nlpscm/metrics.hpp"

#include <algorithm>
#include <limits>

#include "nlpscm/error.hpp"

namespace nlpscm {

namespace {

double endpoint_cost(Mark a, Mark b) {
  if (a == b) return 0.0;
  if (a == Mark::Circle || b == Mark::Circle) return 0.5;
  return 1.0;
}

// Index in `truth` of every variable of `names`; throws on a mismatch.
std::vector<int> map_to_truth(const std::vector<std::string>& names, const Dag& truth) {
  const auto observed = truth.observed_names();
  auto a = names;
  auto b = observed;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a != b) throw InvalidArgument("predicted and true graphs have different variables");
  std::vector<int> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(truth.index_of(n));
  return out;
}

bool valid_adjustment(const Dag& truth, int x, int y, const std::vector<int>& z) {
  const auto de_x = truth.descendants(x);
  const int y_arr[] = {y};
  const auto an_y = truth.ancestors(y_arr);
  std::vector<bool> on_causal_path(truth.size(), false);
  bool any = false;
  for (std::size_t w = 0; w < truth.size(); ++w) {
    if (static_cast<int>(w) != x && de_x[w] && an_y[w]) {
      on_causal_path[w] = true;
      any = true;
    }
  }
  if (any) {
    std::vector<bool> forbidden(truth.size(), false);
    for (std::size_t w = 0; w < truth.size(); ++w) {
      if (!on_causal_path[w]) continue;
      const auto de = truth.descendants(static_cast<int>(w));
      for (std::size_t u = 0; u < de.size(); ++u) forbidden[u] = forbidden[u] || de[u];
    }
    for (int v : z) {
      if (forbidden[static_cast<std::size_t>(v)]) return false;
    }
  }
  std::vector<Dag::Edge> kept;
  for (const auto& e : truth.edges()) {
    if (e.from == x && on_causal_path[static_cast<std::size_t>(e.to)]) continue;
    kept.push_back(e);
  }
  std::vector<bool> latent(truth.size());
  for (std::size_t v = 0; v < truth.size(); ++v) latent[v] = truth.is_latent(static_cast<int>(v));
  const Dag backdoor(truth.variables(), std::move(kept), truth.weighted(), std::move(latent));
  return d_separated(backdoor, x, y, z);
}

}  // namespace

double mod_shd(const Pag& pred, const Pag& truth) {
  if (pred.variables() != truth.variables()) throw InvalidArgument("predicted and true graphs have different variables");
  double total = 0.0;
  const int d = static_cast<int>(pred.size());
  for (int a = 0; a < d; ++a) {
    for (int b = a + 1; b < d; ++b) {
      const bool p = pred.adjacent(a, b);
      const bool t = truth.adjacent(a, b);
      if (p != t) {
        total += 1.0;
      } else if (p) {
        total += endpoint_cost(*pred.mark(a, b), *truth.mark(a, b));
        total += endpoint_cost(*pred.mark(b, a), *truth.mark(b, a));
      }
    }
  }
  return total;
}

double mod_shd(const Pag& pred, const Dag& truth) {
  const Pag exact = truth.to_pag();
  if (pred.variables() == exact.variables()) return mod_shd(pred, exact);
  // Same variables in another order: re-express pred in the truth's order.
  map_to_truth(pred.variables(), truth);
  Pag aligned(exact.variables());
  for (const auto& e : pred.edges()) {
    const int a = aligned.index_of(pred.variables()[static_cast<std::size_t>(e.lo)]);
    const int b = aligned.index_of(pred.variables()[static_cast<std::size_t>(e.hi)]);
    aligned.set_edge(a, b, *pred.mark(e.lo, e.hi), *pred.mark(e.hi, e.lo));
  }
  return mod_shd(aligned, exact);
}

DirectedScores directed_prf(const Pag& pred, const Dag& truth) {
  const auto idx = map_to_truth(pred.variables(), truth);
  long predicted = 0;
  long hits = 0;
  for (const auto& e : pred.edges()) {
    const auto cat = pred.category(e.lo, e.hi);
    int from = -1;
    int to = -1;
    if (cat == EdgeCategory::Directed) {
      from = e.lo;
      to = e.hi;
    } else if (cat == EdgeCategory::ReverseDirected) {
      from = e.hi;
      to = e.lo;
    } else {
      continue;
    }
    ++predicted;
    if (truth.has_edge(idx[static_cast<std::size_t>(from)], idx[static_cast<std::size_t>(to)])) ++hits;
  }
  long actual = 0;
  for (const auto& e : truth.edges()) {
    if (!truth.is_latent(e.from) && !truth.is_latent(e.to)) ++actual;
  }
  DirectedScores s;
  s.precision = predicted > 0 ? static_cast<double>(hits) / static_cast<double>(predicted) : 0.0;
  s.recall = actual > 0 ? static_cast<double>(hits) / static_cast<double>(actual) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

std::vector<Dag> dag_extensions(const Pag& pred, std::size_t cap) {
  enum Choice { Forward, Backward, Drop };
  const auto edges = pred.edges();
  std::vector<std::vector<Choice>> options;
  std::size_t count = 1;
  for (const auto& e : edges) {
    const Mark m_lo = *pred.mark(e.lo, e.hi);
    const Mark m_hi = *pred.mark(e.hi, e.lo);
    std::vector<Mark> lo_choices = m_lo == Mark::Circle ? std::vector<Mark>{Mark::Tail, Mark::Arrow} : std::vector<Mark>{m_lo};
    std::vector<Mark> hi_choices = m_hi == Mark::Circle ? std::vector<Mark>{Mark::Tail, Mark::Arrow} : std::vector<Mark>{m_hi};
    std::vector<Choice> opts;
    auto add = [&](Choice c) {
      if (std::find(opts.begin(), opts.end(), c) == opts.end()) opts.push_back(c);
    };
    for (Mark a : lo_choices) {
      for (Mark b : hi_choices) {
        if (a == Mark::Tail && b == Mark::Arrow) {
          add(Forward);
        } else if (a == Mark::Arrow && b == Mark::Tail) {
          add(Backward);
        } else if (a == Mark::Tail && b == Mark::Tail) {
          add(Forward);
          add(Backward);
        } else {
          add(Drop);
        }
      }
    }
    count *= opts.size();
    if (count > cap) {
      throw InvalidArgument("more than " + std::to_string(cap) + " DAG extensions; use a smaller graph");
    }
    options.push_back(std::move(opts));
  }

  std::vector<Dag> out;
  std::vector<std::size_t> digit(edges.size(), 0);
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<Dag::Edge> dag_edges;
    for (std::size_t i = 0; i < edges.size(); ++i) {
      switch (options[i][digit[i]]) {
        case Forward: dag_edges.push_back({edges[i].lo, edges[i].hi, 1.0}); break;
        case Backward: dag_edges.push_back({edges[i].hi, edges[i].lo, 1.0}); break;
        case Drop: break;
      }
    }
    try {
      out.emplace_back(pred.variables(), std::move(dag_edges), false);
    } catch (const InvalidGraph&) {
      // cyclic extension
    }
    for (std::size_t i = 0; i < digit.size(); ++i) {
      if (++digit[i] < options[i].size()) break;
      digit[i] = 0;
    }
  }
  return out;
}

long sid(const Dag& pred, const Dag& truth) {
  const auto idx = map_to_truth(pred.variables(), truth);
  long mistakes = 0;
  for (std::size_t xp = 0; xp < pred.size(); ++xp) {
    const int x = idx[xp];
    std::vector<int> z;
    for (int p : pred.parents(static_cast<int>(xp))) z.push_back(idx[static_cast<std::size_t>(p)]);
    std::sort(z.begin(), z.end());
    const auto de_x = truth.descendants(x);
    for (std::size_t yp = 0; yp < pred.size(); ++yp) {
      if (yp == xp) continue;
      const int y = idx[yp];
      const bool y_is_parent = std::binary_search(z.begin(), z.end(), y);
      const bool wrong = y_is_parent ? static_cast<bool>(de_x[static_cast<std::size_t>(y)])
                                     : !valid_adjustment(truth, x, y, z);
      if (wrong) ++mistakes;
    }
  }
  return mistakes;
}

SidBounds sid_bounds(const Pag& pred, const Dag& truth, std::size_t cap) {
  map_to_truth(pred.variables(), truth);
  const auto extensions = dag_extensions(pred, cap);
  if (extensions.empty()) throw InvalidArgument("the predicted PAG has no acyclic DAG extension");
  SidBounds b{std::numeric_limits<long>::max(), std::numeric_limits<long>::min()};
  for (const auto& ext : extensions) {
    const long s = sid(ext, truth);
    b.lower = std::min(b.lower, s);
    b.upper = std::max(b.upper, s);
  }
  return b;
}

MetricReport evaluate(const Pag& pred, const Dag& truth, std::optional<double> mean_entropy) {
  MetricReport r;
  r.mod_shd = mod_shd(pred, truth);
  try {
    r.sid = sid_bounds(pred, truth);
  } catch (const Error& e) {
    r.sid_error = e.what();
  }
  const auto s = directed_prf(pred, truth);
  r.precision = s.precision;
  r.recall = s.recall;
  r.f1 = s.f1;
  r.mean_entropy = mean_entropy;
  return r;
}

std::vector<double> entropy_trace(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw InvalidArgument("entropy trace needs at least one batch");
  std::vector<double> out;
  out.reserve(reports.size());
  for (const auto& r : reports) {
    if (!r.mean_entropy) throw InvalidArgument("a batch report has no mean entropy");
    out.push_back(*r.mean_entropy);
  }
  return out;
}

nlohmann::ordered_json to_json(const MetricReport& report) {
  nlohmann::ordered_json j;
  j["mod_shd"] = report.mod_shd;
  if (report.sid) {
    j["sid"] = {{"lower", report.sid->lower}, {"upper", report.sid->upper}};
  } else {
    j["sid"] = nullptr;
  }
  if (report.sid_error) j["sid_error"] = *report.sid_error;
  j["precision"] = report.precision;
  j["recall"] = report.recall;
  j["f1"] = report.f1;
  j["mean_entropy"] = report.mean_entropy ? nlohmann::ordered_json(*report.mean_entropy) : nlohmann::ordered_json(nullptr);
  return j;
}

}  // namespace nlpscm
