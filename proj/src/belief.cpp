#include "nlpscm/belief.hpp"

#include <algorithm>

#include "nlpscm/error.hpp"

namespace nlpscm {

void ScoreWeights::validate() const {
  if (w1 < 0 || w2 < 0 || w3 < 0) throw InvalidArgument("score weights must be nonnegative");
  if (!(w1 + w2 + w3 > 0)) throw InvalidArgument("score weights must not all be zero");
  if (alpha < 0 || alpha > 1) throw InvalidArgument("threshold alpha must lie in [0, 1]");
  if (min_threshold < 0) throw InvalidArgument("minimum threshold must be nonnegative");
}

std::optional<EdgeCategory> promote(const Bins& bins, double tau_effective) {
  const auto best = std::max_element(bins.begin(), bins.end());
  if (*best <= 0 || static_cast<double>(*best) < tau_effective) return std::nullopt;
  return static_cast<EdgeCategory>(best - bins.begin());
}

void EdgeHistogram::update(int a, int b, EdgeCategory answer) {
  if (!is_queryable(answer)) throw InvalidArgument("histogram answer outside the queryable categories");
  if (a == b) throw InvalidArgument("histogram pair needs two distinct variables");
  auto& bins = counts_[PairKey::of(a, b)];
  bins[static_cast<std::size_t>(normalize(a, b, answer))] += 1;
  ++total_;
}

Bins EdgeHistogram::bins(PairKey pair) const {
  const auto it = counts_.find(pair);
  return it == counts_.end() ? Bins{} : it->second;
}

std::int64_t EdgeHistogram::pair_total(PairKey pair) const { return bins_total<std::int64_t>(bins(pair)); }

double EdgeHistogram::entropy(PairKey pair) const { return nlpscm::entropy<double>(bins(pair)); }

double EdgeHistogram::threshold(PairKey pair, const ScoreWeights& w) const {
  return dynamic_threshold<double>(bins(pair), w.alpha, static_cast<double>(total_));
}

double EdgeHistogram::effective_threshold(PairKey pair, const ScoreWeights& w) const {
  return nlpscm::effective_threshold(threshold(pair, w), w.min_threshold);
}

double EdgeHistogram::score(PairKey pair, const ScoreWeights& w) const {
  const auto b = bins(pair);
  const auto te = bins_total<double>(b);
  if (te <= 0) return std::numeric_limits<double>::infinity();
  const double tau = effective_threshold(pair, w);
  const double top = static_cast<double>(*std::max_element(b.begin(), b.end()));
  return selection_score<double>(nlpscm::entropy<double>(b), tau - top, static_cast<double>(total_), te, w);
}

std::optional<EdgeCategory> EdgeHistogram::promotion(PairKey pair, const ScoreWeights& w) const {
  if (pair_total(pair) <= 0) return std::nullopt;
  return promote(bins(pair), effective_threshold(pair, w));
}

double mean_entropy(const EdgeHistogram& hist) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& [pair, bins] : hist.pairs()) {
    if (bins_total<std::int64_t>(bins) <= 0) continue;
    sum += entropy<double>(bins);
    ++n;
  }
  if (n == 0) throw InvalidArgument("mean entropy needs at least one queried pair");
  return sum / static_cast<double>(n);
}

void LatentHistogram::update(PairKey pair, const std::string& name) { counts_[pair][name] += 1; }

std::optional<std::string> LatentHistogram::modal(PairKey pair) const {
  const auto it = counts_.find(pair);
  if (it == counts_.end() || it->second.empty()) return std::nullopt;
  const auto best = std::max_element(it->second.begin(), it->second.end(),
                                     [](const auto& x, const auto& y) { return x.second < y.second; });
  return best->first;
}

namespace {

std::string pair_label(PairKey pair, const std::vector<std::string>& names) {
  return names.at(static_cast<std::size_t>(pair.lo)) + "|" + names.at(static_cast<std::size_t>(pair.hi));
}

PairKey pair_from_label(const std::string& label, const std::vector<std::string>& names) {
  const auto bar = label.find('|');
  if (bar == std::string::npos) throw InvalidArgument("histogram key must be 'A|B': " + label);
  auto find = [&names](const std::string& n) {
    const auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) throw UnknownVariable(n);
    return static_cast<int>(it - names.begin());
  };
  const int a = find(label.substr(0, bar));
  const int b = find(label.substr(bar + 1));
  if (a >= b) throw InvalidArgument("histogram key must list the earlier variable first: " + label);
  return {a, b};
}

}  // namespace

nlohmann::ordered_json to_json(const EdgeHistogram& hist, const std::vector<std::string>& names) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [pair, bins] : hist.pairs()) j[pair_label(pair, names)] = bins;
  return j;
}

EdgeHistogram edge_histogram_from_json(const nlohmann::json& j, const std::vector<std::string>& names) {
  EdgeHistogram hist;
  for (const auto& [label, value] : j.items()) {
    const auto pair = pair_from_label(label, names);
    const auto bins = value.get<std::vector<std::int64_t>>();
    if (bins.size() != kQueryableCategoryCount) throw InvalidArgument("histogram entry needs 7 bins: " + label);
    for (std::size_t c = 0; c < bins.size(); ++c) {
      if (bins[c] < 0) throw InvalidArgument("negative histogram count: " + label);
      for (std::int64_t k = 0; k < bins[c]; ++k) hist.update(pair.lo, pair.hi, static_cast<EdgeCategory>(c));
    }
  }
  return hist;
}

nlohmann::ordered_json to_json(const LatentHistogram& hist, const std::vector<std::string>& names) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [pair, counts] : hist.pairs()) {
    nlohmann::ordered_json c = nlohmann::ordered_json::object();
    for (const auto& [name, n] : counts) c[name] = n;
    j[pair_label(pair, names)] = std::move(c);
  }
  return j;
}

LatentHistogram latent_histogram_from_json(const nlohmann::json& j, const std::vector<std::string>& names) {
  LatentHistogram hist;
  for (const auto& [label, value] : j.items()) {
    const auto pair = pair_from_label(label, names);
    for (const auto& [name, n] : value.items()) {
      for (std::int64_t k = 0; k < n.get<std::int64_t>(); ++k) hist.update(pair, name);
    }
  }
  return hist;
}

}  // namespace nlpscm
