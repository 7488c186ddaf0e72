#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdt/common.hpp"
#include "tdt/heatmap.hpp"
#include "tdt/repr.hpp"

namespace tdt {

inline constexpr double kDefaultThreshold = 0.6;
inline constexpr std::int64_t kUnclustered = -1;

using Assignment = std::map<std::string, std::int64_t>;

struct EventClustering {
  Assignment assignment;                          // doc id -> event id (kUnclustered for degenerate)
  std::map<std::int64_t, DenseVector> centroids;  // event id -> unit centroid
  double threshold = kDefaultThreshold;
  std::uint64_t model_version = 0;
};

struct ClusterItem {
  std::string id;
  std::int64_t timestamp = 0;
  Representation repr;
};

/// Nearest-centroid online clustering. Items are visited in (timestamp, id)
/// order; each joins the most similar event when that similarity reaches the
/// threshold (ties to the lower event id), otherwise opens a new event.
/// Centroids are the L2-normalized running mean of member vectors.
inline EventClustering cluster_online(std::vector<ClusterItem> items, double threshold, std::uint64_t model_version = 0) {
  if (!(threshold > -1.0 && threshold < 1.0)) throw Error("cluster_online: threshold must lie in (-1, 1)");
  std::stable_sort(items.begin(), items.end(), [](const ClusterItem& a, const ClusterItem& b) {
    return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.id < b.id;
  });
  EventClustering out;
  out.threshold = threshold;
  out.model_version = model_version;
  std::map<std::int64_t, DenseVector> sums;
  std::int64_t next_id = 0;
  for (const auto& item : items) {
    if (item.repr.degenerate) {
      out.assignment[item.id] = kUnclustered;
      continue;
    }
    std::int64_t best = -1;
    double best_sim = -2.0;
    for (const auto& [eid, c] : out.centroids) {
      const double s = dot(item.repr.vec, c);
      if (s > best_sim) {
        best_sim = s;
        best = eid;
      }
    }
    if (best < 0 || best_sim < threshold) best = next_id++;
    out.assignment[item.id] = best;
    auto& sum = sums[best];
    if (sum.empty()) sum.assign(item.repr.vec.size(), 0.0);
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += item.repr.vec[j];
    DenseVector c = sum;
    const double n = norm(c);
    if (n > 0)
      for (auto& v : c) v /= n;
    out.centroids[best] = std::move(c);
  }
  return out;
}

/// Clusters every corpus document under `model`.
inline EventClustering cluster_corpus(const Corpus& corpus, const InputTable& table, const EventModelParams& model,
                                      double threshold = kDefaultThreshold) {
  std::vector<ClusterItem> items;
  items.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i)
    items.push_back({corpus.doc(i).id, corpus.doc(i).timestamp, event_repr(table.input(i), model)});
  return cluster_online(std::move(items), threshold, model.version);
}

struct BCubedScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline double harmonic(double p, double r) { return (p == 0.0 || r == 0.0) ? 0.0 : 2.0 * p * r / (p + r); }

namespace detail {

/// Sum of non-negative integer ratios, kept exact while it fits and
/// mirrored in floating point for when it does not.
class RatioSum {
 public:
  using Int = __int128;

  void add(std::uint64_t num, std::uint64_t den) {
    approx_ += static_cast<double>(num) / static_cast<double>(den);
    if (!exact_) return;
    num_ = num_ * den + static_cast<Int>(num) * den_;
    den_ *= den;
    reduce();
  }

  void divide(std::uint64_t by) {
    approx_ /= static_cast<double>(by);
    if (!exact_) return;
    den_ *= by;
    reduce();
  }

  bool exact() const { return exact_; }
  Int num() const { return num_; }
  Int den() const { return den_; }
  double value() const { return exact_ ? static_cast<double>(num_) / static_cast<double>(den_) : approx_; }

 private:
  static constexpr Int kLimit = Int(1) << 52;

  static Int gcd(Int a, Int b) {
    while (b != 0) a = std::exchange(b, a % b);
    return a;
  }

  void reduce() {
    if (const Int g = gcd(num_, den_); g > 1) {
      num_ /= g;
      den_ /= g;
    }
    if (num_ >= kLimit || den_ >= kLimit) exact_ = false;
  }

  Int num_ = 0, den_ = 1;
  double approx_ = 0.0;
  bool exact_ = true;
};

}  // namespace detail

/// Item-averaged BCubed precision, recall and F1. Each cluster contributes
/// sum(overlap^2) / size, accumulated as an exact ratio while it fits.
inline BCubedScore bcubed(const Assignment& pred, const Assignment& gold) {
  if (pred.size() != gold.size()) throw Error("bcubed: assignments cover different documents");
  for (const auto& [id, _] : pred)
    if (!gold.contains(id)) throw Error("bcubed: document '" + id + "' missing from gold");
  if (pred.empty()) throw Error("bcubed: empty assignment");
  std::map<std::int64_t, std::uint64_t> pred_size, gold_size;
  std::map<std::pair<std::int64_t, std::int64_t>, std::uint64_t> both;
  for (const auto& [id, p] : pred) {
    const auto g = gold.at(id);
    ++pred_size[p];
    ++gold_size[g];
    ++both[{p, g}];
  }
  std::map<std::int64_t, std::uint64_t> pred_sq, gold_sq;
  for (const auto& [key, n] : both) {
    pred_sq[key.first] += n * n;
    gold_sq[key.second] += n * n;
  }
  detail::RatioSum precision, recall;
  for (const auto& [c, sq] : pred_sq) precision.add(sq, pred_size[c]);
  for (const auto& [c, sq] : gold_sq) recall.add(sq, gold_size[c]);
  precision.divide(pred.size());
  recall.divide(pred.size());

  BCubedScore s{precision.value(), recall.value(), 0.0};
  if (precision.exact() && recall.exact()) {
    using Int = detail::RatioSum::Int;
    const Int num = 2 * precision.num() * recall.num();
    const Int den = precision.num() * recall.den() + recall.num() * precision.den();
    s.f1 = num == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  } else {
    s.f1 = harmonic(s.precision, s.recall);
  }
  return s;
}

/// Mean over gold events of the largest share of the event in one heatmap row.
inline double row_purity(const HeatmapGrid& grid, const Assignment& gold) {
  std::map<std::int64_t, std::map<std::size_t, std::size_t>> per_event;
  std::map<std::int64_t, std::size_t> sizes;
  for (const auto& [id, event] : gold) {
    ++per_event[event][grid.row_of(id)];
    ++sizes[event];
  }
  if (sizes.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [event, rows] : per_event) {
    std::size_t best = 0;
    for (const auto& [_, c] : rows) best = std::max(best, c);
    total += static_cast<double>(best) / static_cast<double>(sizes[event]);
  }
  return total / static_cast<double>(sizes.size());
}

inline nlohmann::json to_json(const EventClustering& c) {
  nlohmann::json assignment = nlohmann::json::object();
  for (const auto& [id, e] : c.assignment) assignment[id] = e;
  return {{"model_version", c.model_version},
          {"threshold", c.threshold},
          {"num_events", c.centroids.size()},
          {"unclustered_id", kUnclustered},
          {"assignment", std::move(assignment)}};
}

inline nlohmann::json to_json(const BCubedScore& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

inline Assignment assignment_from_json(const nlohmann::json& j) {
  Assignment a;
  try {
    for (const auto& [id, e] : j.items()) a[id] = e.get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("assignment: malformed: ") + e.what());
  }
  return a;
}

}  // namespace tdt
