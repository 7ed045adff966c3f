#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlpscm/error.hpp"
#include "nlpscm/graph.hpp"

namespace nlpscm {

using Bins = std::array<std::int64_t, kQueryableCategoryCount>;

struct ScoreWeights {
  double w1 = 0.1;
  double w2 = 0.6;
  double w3 = 0.3;
  double alpha = 0.3;
  double min_threshold = 10.0;

  /// Throws InvalidArgument on negative weights, a zero weight sum, or alpha outside [0, 1].
  void validate() const;
};

/// Smallest threshold distance used in the score.
inline constexpr double kMinThresholdDistance = 0.5;

template <typename Scalar = double>
Scalar bins_total(const Bins& bins) {
  Scalar t(0);
  for (auto c : bins) t += Scalar(c);
  return t;
}

/// Natural-log Shannon entropy of the normalized bins, 0 log 0 = 0. Throws on empty bins.
template <typename Scalar = double>
Scalar entropy(const Bins& bins);

/// tau = alpha E Te + (1 - alpha) sqrt(Te (1 - Te / T)).
template <typename Scalar = double>
Scalar dynamic_threshold(const Bins& bins, Scalar alpha, Scalar total);

template <typename Scalar = double>
Scalar effective_threshold(Scalar tau, Scalar min_threshold) {
  return tau > min_threshold ? tau : min_threshold;
}

/// S = w1 E + w2 / max(TD, 0.5) + w3 sqrt(ln T / Te); the bonus is zero for T < 2.
template <typename Scalar = double>
Scalar selection_score(Scalar entropy_value, Scalar threshold_distance, Scalar total, Scalar te,
                       const ScoreWeights& w) {
  using std::log;
  using std::sqrt;
  const Scalar td = threshold_distance > Scalar(kMinThresholdDistance) ? threshold_distance : Scalar(kMinThresholdDistance);
  Scalar bonus(0);
  if (total >= Scalar(2)) bonus = sqrt(log(total) / te);
  return Scalar(w.w1) * entropy_value + Scalar(w.w2) / td + Scalar(w.w3) * bonus;
}

/// Modal category when its count reaches tau_eff; ties go to the earlier category.
std::optional<EdgeCategory> promote(const Bins& bins, double tau_effective);

/// Cumulative expert answers per unordered pair, oriented as (lo, hi).
class EdgeHistogram {
 public:
  void update(int a, int b, EdgeCategory answer);
  /// Bins relative to (lo, hi); all zeros when the pair was never queried.
  Bins bins(PairKey pair) const;
  std::int64_t pair_total(PairKey pair) const;
  std::int64_t total() const { return total_; }
  const std::map<PairKey, Bins>& pairs() const { return counts_; }

  double entropy(PairKey pair) const;
  double threshold(PairKey pair, const ScoreWeights& w) const;
  double effective_threshold(PairKey pair, const ScoreWeights& w) const;
  /// +infinity for unqueried pairs.
  double score(PairKey pair, const ScoreWeights& w) const;
  std::optional<EdgeCategory> promotion(PairKey pair, const ScoreWeights& w) const;

  friend bool operator==(const EdgeHistogram&, const EdgeHistogram&) = default;

 private:
  std::map<PairKey, Bins> counts_;
  std::int64_t total_ = 0;
};

/// Mean entropy over queried pairs. Throws when nothing was queried.
double mean_entropy(const EdgeHistogram& hist);

/// Confounder-name counts per confounded pair.
class LatentHistogram {
 public:
  void update(PairKey pair, const std::string& name);
  const std::map<PairKey, std::map<std::string, std::int64_t>>& pairs() const { return counts_; }
  /// Most frequent name; ties go to the lexicographically smallest.
  std::optional<std::string> modal(PairKey pair) const;

  friend bool operator==(const LatentHistogram&, const LatentHistogram&) = default;

 private:
  std::map<PairKey, std::map<std::string, std::int64_t>> counts_;
};

nlohmann::ordered_json to_json(const EdgeHistogram& hist, const std::vector<std::string>& names);
EdgeHistogram edge_histogram_from_json(const nlohmann::json& j, const std::vector<std::string>& names);
nlohmann::ordered_json to_json(const LatentHistogram& hist, const std::vector<std::string>& names);
LatentHistogram latent_histogram_from_json(const nlohmann::json& j, const std::vector<std::string>& names);

// ---------------------------------------------------------------- template definitions

template <typename Scalar>
Scalar entropy(const Bins& bins) {
  using std::log;
  const Scalar t = bins_total<Scalar>(bins);
  if (!(t > Scalar(0))) throw InvalidArgument("entropy of an empty histogram");
  Scalar h(0);
  for (auto c : bins) {
    if (c <= 0) continue;
    const Scalar p = Scalar(c) / t;
    h -= p * log(p);
  }
  return h;
}

template <typename Scalar>
Scalar dynamic_threshold(const Bins& bins, Scalar alpha, Scalar total) {
  using std::sqrt;
  const Scalar te = bins_total<Scalar>(bins);
  if (!(te > Scalar(0))) throw InvalidArgument("threshold of an unqueried pair");
  if (total < te) throw InvalidArgument("global count below pair count");
  Scalar spread = te * (Scalar(1) - te / total);
  if (spread < Scalar(0)) spread = Scalar(0);
  return alpha * entropy<Scalar>(bins) * te + (Scalar(1) - alpha) * sqrt(spread);
}

}  // namespace nlpscm
