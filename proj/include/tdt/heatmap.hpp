#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdt/common.hpp"
#include "tdt/ingest.hpp"
#include "tdt/learn.hpp"
#include "tdt/repr.hpp"

namespace tdt {

inline constexpr std::size_t kDefaultRows = 20;
inline constexpr std::size_t kDefaultLabelWords = 5;
inline constexpr double kLabelSmoothing = 0.01;

struct PowerIterationOptions {
  double tolerance = 1e-8;
  int max_iterations = 1000;
};

/// First principal component of the mean-centered non-degenerate
/// representations, by power iteration on the covariance. Returns one score per
/// input (centered dot product); degenerate inputs score 0. The sign is fixed
/// so the largest-magnitude loading is positive.
inline std::vector<double> project_topic_axis(std::span<const Representation> reprs,
                                              const PowerIterationOptions& opt = {}) {
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < reprs.size(); ++i)
    if (!reprs[i].degenerate) live.push_back(i);
  if (live.size() < 2) throw Error("project_topic_axis: need at least two non-degenerate representations");
  const std::size_t m = reprs[live[0]].vec.size();
  for (auto i : live)
    if (reprs[i].vec.size() != m) throw Error("project_topic_axis: inconsistent dimensions");

  DenseVector mean(m, 0.0);
  for (auto i : live)
    for (std::size_t j = 0; j < m; ++j) mean[j] += reprs[i].vec[j];
  for (auto& v : mean) v /= static_cast<double>(live.size());

  Matrix centered(live.size(), m);
  std::size_t widest = 0;
  double widest_norm = -1.0;
  for (std::size_t r = 0; r < live.size(); ++r) {
    for (std::size_t j = 0; j < m; ++j) centered(r, j) = reprs[live[r]].vec[j] - mean[j];
    const double n = norm(centered.row(r));
    if (n > widest_norm) {
      widest_norm = n;
      widest = r;
    }
  }
  if (widest_norm < 1e-12) throw Error("project_topic_axis: representations have zero variance");

  Matrix cov(m, m);
  for (std::size_t r = 0; r < centered.rows; ++r) add_outer(cov, centered.row(r), centered.row(r));

  DenseVector v(centered.row(widest).begin(), centered.row(widest).end());
  for (auto& x : v) x /= widest_norm;
  for (int it = 0; it < opt.max_iterations; ++it) {
    DenseVector next = times_col(cov, v);
    const double n = norm(next);
    if (n < 1e-300) break;
    for (auto& x : next) x /= n;
    double delta = 0.0;
    for (std::size_t j = 0; j < m; ++j) delta = std::max(delta, std::abs(next[j] - v[j]));
    v = std::move(next);
    if (delta < opt.tolerance) break;
  }

  std::size_t lead = 0;
  for (std::size_t j = 1; j < m; ++j)
    if (std::abs(v[j]) > std::abs(v[lead])) lead = j;
  if (v[lead] < 0)
    for (auto& x : v) x = -x;

  std::vector<double> out(reprs.size(), 0.0);
  for (std::size_t r = 0; r < live.size(); ++r) out[live[r]] = dot(centered.row(r), v);
  return out;
}

inline std::vector<double> project_topic_axis(const std::vector<DenseVector>& vecs,
                                              const PowerIterationOptions& opt = {}) {
  std::vector<Representation> reprs;
  reprs.reserve(vecs.size());
  for (const auto& v : vecs) reprs.push_back({v, false});
  return project_topic_axis(std::span<const Representation>(reprs), opt);
}

/// Equal-frequency buckets over the (scalar, id) order. Row sizes differ by at
/// most one, the remainder going to the lowest rows.
inline std::vector<std::size_t> bucketize(std::span<const double> scalars, std::span<const std::string> ids,
                                          std::size_t rows) {
  if (rows < 1) throw Error("bucketize: need at least one row");
  if (ids.size() != scalars.size()) throw Error("bucketize: ids and scalars differ in length");
  const std::size_t n = scalars.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scalars[a] != scalars[b]) return scalars[a] < scalars[b];
    if (ids[a] != ids[b]) return ids[a] < ids[b];
    return a < b;
  });
  const std::size_t base = n / rows, rem = n % rows;
  std::vector<std::size_t> out(n, 0);
  std::size_t pos = 0;
  for (std::size_t r = 0; r < rows && pos < n; ++r) {
    const std::size_t size = base + (r < rem ? 1 : 0);
    for (std::size_t k = 0; k < size; ++k) out[order[pos++]] = r;
  }
  return out;
}

inline std::vector<std::size_t> bucketize(std::span<const double> scalars, std::size_t rows) {
  std::vector<std::string> ids(scalars.size());
  return bucketize(scalars, ids, rows);
}

struct Cell {
  std::size_t count = 0;
  double intensity = 0.0;
  std::vector<std::string> doc_ids;
};

struct Region {
  std::size_t row_lo = 0, row_hi = 0;
  std::size_t day_lo = 0, day_hi = 0;
};

using RowLabel = std::vector<std::pair<std::string, double>>;

struct HeatmapGrid {
  std::size_t rows = 0;  // M
  std::size_t days = 0;  // D
  std::int64_t epoch_day0 = 0;
  std::vector<Cell> cells;  // row-major, rows x days
  std::vector<RowLabel> row_labels;
  std::uint64_t model_version = 0;
  std::map<std::string, std::pair<std::size_t, std::size_t>> placement;  // doc id -> (row, day)

  Cell& cell(std::size_t row, std::size_t day) { return cells.at(row * days + day); }
  const Cell& cell(std::size_t row, std::size_t day) const { return cells.at(row * days + day); }

  std::size_t row_of(const std::string& id) const {
    auto it = placement.find(id);
    if (it == placement.end()) throw Error("heatmap: document '" + id + "' not in grid");
    return it->second.first;
  }

  bool valid(const Region& r) const {
    return r.row_lo <= r.row_hi && r.row_hi < rows && r.day_lo <= r.day_hi && r.day_hi < days;
  }

  /// Document ids inside the region, sorted.
  std::vector<std::string> region_docs(const Region& r) const {
    if (!valid(r)) throw Error("heatmap: region outside grid bounds");
    std::vector<std::string> out;
    for (std::size_t row = r.row_lo; row <= r.row_hi; ++row)
      for (std::size_t day = r.day_lo; day <= r.day_hi; ++day) {
        const auto& c = cell(row, day);
        out.insert(out.end(), c.doc_ids.begin(), c.doc_ids.end());
      }
    std::sort(out.begin(), out.end());
    return out;
  }
};

/// Smoothed log-odds of each vocabulary word in a row versus the rest of the
/// corpus. Counts use in-vocabulary tokens only.
inline void label_rows(HeatmapGrid& grid, const Corpus& corpus, std::size_t k = kDefaultLabelWords) {
  const auto& vocab = corpus.vocabulary();
  const std::size_t V = vocab.size();
  std::vector<std::vector<double>> counts(grid.rows, std::vector<double>(V, 0.0));
  std::vector<double> totals(grid.rows, 0.0);
  std::vector<std::size_t> docs_in_row(grid.rows, 0);
  for (const auto& d : corpus.documents()) {
    const std::size_t r = grid.row_of(d.id);
    ++docs_in_row[r];
    for (const auto& tok : d.tokens)
      if (auto e = vocab.find(tok)) {
        counts[r][e->index] += 1.0;
        totals[r] += 1.0;
      }
  }
  std::vector<double> all(V, 0.0);
  double all_total = 0.0;
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t w = 0; w < V; ++w) all[w] += counts[r][w];
    all_total += totals[r];
  }
  const double beta = kLabelSmoothing;
  const double bv = beta * static_cast<double>(V);
  grid.row_labels.assign(grid.rows, {});
  for (std::size_t r = 0; r < grid.rows; ++r) {
    if (docs_in_row[r] == 0 || V == 0) continue;
    const double t_row = totals[r], t_rest = all_total - totals[r];
    RowLabel scored;
    scored.reserve(V);
    for (std::size_t w = 0; w < V; ++w) {
      const double c_row = counts[r][w], c_rest = all[w] - counts[r][w];
      const double s = std::log((c_row + beta) / (t_row + bv)) - std::log((c_rest + beta) / (t_rest + bv));
      scored.emplace_back(vocab.term(w), s);
    }
    const std::size_t take = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                      [](const auto& a, const auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
    scored.resize(take);
    grid.row_labels[r] = std::move(scored);
  }
}

/// Grid over precomputed row assignments: counts, per-day intensities,
/// document lists.
inline HeatmapGrid assemble_grid(const Corpus& corpus, std::span<const std::size_t> rows_of_docs, std::size_t rows,
                                 std::uint64_t model_version) {
  HeatmapGrid g;
  g.rows = rows;
  g.days = static_cast<std::size_t>(corpus.axis().num_days);
  g.epoch_day0 = corpus.axis().epoch_day0;
  g.model_version = model_version;
  g.cells.assign(g.rows * g.days, {});
  std::vector<std::size_t> column_total(g.days, 0);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto day = static_cast<std::size_t>(corpus.column(i));
    const std::size_t row = rows_of_docs[i];
    auto& c = g.cell(row, day);
    c.doc_ids.push_back(corpus.doc(i).id);
    ++c.count;
    ++column_total[day];
    g.placement[corpus.doc(i).id] = {row, day};
  }
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t d = 0; d < g.days; ++d) {
      auto& c = g.cell(r, d);
      std::sort(c.doc_ids.begin(), c.doc_ids.end());
      c.intensity = column_total[d] == 0 ? 0.0 : static_cast<double>(c.count) / static_cast<double>(column_total[d]);
    }
  return g;
}

/// event_repr -> project_topic_axis -> bucketize, with day columns.
inline HeatmapGrid build_heatmap(const Corpus& corpus, const InputTable& table, const EventModelParams& model,
                                 std::size_t rows = kDefaultRows, std::size_t label_words = kDefaultLabelWords) {
  if (corpus.size() == 0) throw Error("build_heatmap: empty corpus");
  if (rows < 1) throw Error("build_heatmap: need at least one row");
  const auto reprs = represent_all(table.inputs(), model);
  const auto scalars = project_topic_axis(std::span<const Representation>(reprs));
  const auto assignment = bucketize(scalars, table.ids(), rows);
  HeatmapGrid g = assemble_grid(corpus, assignment, rows, model.version);
  label_rows(g, corpus, label_words);
  return g;
}

inline HeatmapGrid build_heatmap(const Corpus& corpus, const BaseEmbedder& embedder, const EventModelParams& model,
                                 std::size_t rows = kDefaultRows) {
  return build_heatmap(corpus, InputTable(corpus, embedder), model, rows);
}

/// Uniform sample without replacement, deterministic per seed.
inline std::vector<std::string> sample_cell(const Cell& cell, std::size_t n, std::uint64_t seed) {
  if (n >= cell.doc_ids.size()) return cell.doc_ids;
  std::vector<std::string> ids = cell.doc_ids;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + uniform_index(rng, ids.size() - i);
    std::swap(ids[i], ids[j]);
  }
  ids.resize(n);
  return ids;
}

struct RegionExhausted {};

using RegionPairResult = std::variant<PairKey, RegionExhausted>;

/// Uniform over unasked unordered pairs of distinct documents in the region.
inline RegionPairResult sample_region_pair(const Region& region, const HeatmapGrid& grid,
                                           const std::set<PairKey>& asked, std::uint64_t seed) {
  const auto docs = grid.region_docs(region);
  if (docs.size() < 2) throw Error("sample_region_pair: region holds fewer than two documents");
  const std::size_t n = docs.size();
  const std::uint64_t total = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  std::uint64_t asked_inside = 0;
  for (const auto& p : asked)
    if (std::binary_search(docs.begin(), docs.end(), p.first) && std::binary_search(docs.begin(), docs.end(), p.second))
      ++asked_inside;
  if (asked_inside >= total) return RegionExhausted{};
  Rng rng(seed);
  std::uint64_t pick = uniform_index(rng, total - asked_inside);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      PairKey key{docs[i], docs[j]};
      if (asked.contains(key)) continue;
      if (pick-- == 0) return key;
    }
  return RegionExhausted{};
}

// ---------------------------------------------------------------------------
// Export

inline nlohmann::json to_json(const Region& r) {
  return {{"row_lo", r.row_lo}, {"row_hi", r.row_hi}, {"day_lo", r.day_lo}, {"day_hi", r.day_hi}};
}

inline Region region_from_json(const nlohmann::json& j) {
  try {
    auto get = [&](const char* k) {
      const auto v = j.at(k).get<std::int64_t>();
      if (v < 0) throw Error(std::string("region: negative ") + k);
      return static_cast<std::size_t>(v);
    };
    return Region{get("row_lo"), get("row_hi"), get("day_lo"), get("day_hi")};
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("region: malformed: ") + e.what());
  }
}

/// Structured grid document: dimensions, row-major per-cell arrays, row labels
/// and model version. Row 0 is drawn at the bottom of the y-axis.
inline nlohmann::json to_json(const HeatmapGrid& g) {
  nlohmann::json counts = nlohmann::json::array(), intensities = nlohmann::json::array(),
                 ids = nlohmann::json::array(), labels = nlohmann::json::array();
  for (std::size_t r = 0; r < g.rows; ++r) {
    nlohmann::json cr = nlohmann::json::array(), ir = nlohmann::json::array(), dr = nlohmann::json::array();
    for (std::size_t d = 0; d < g.days; ++d) {
      const auto& c = g.cell(r, d);
      cr.push_back(c.count);
      ir.push_back(c.intensity);
      dr.push_back(c.doc_ids);
    }
    counts.push_back(std::move(cr));
    intensities.push_back(std::move(ir));
    ids.push_back(std::move(dr));
    nlohmann::json lr = nlohmann::json::array();
    if (r < g.row_labels.size())
      for (const auto& [w, s] : g.row_labels[r]) lr.push_back({{"word", w}, {"score", s}});
    labels.push_back(std::move(lr));
  }
  return {{"rows", g.rows},
          {"days", g.days},
          {"epoch_day0", g.epoch_day0},
          {"model_version", g.model_version},
          {"row_origin", "bottom"},
          {"counts", std::move(counts)},
          {"intensities", std::move(intensities)},
          {"doc_ids", std::move(ids)},
          {"row_labels", std::move(labels)}};
}

inline HeatmapGrid grid_from_json(const nlohmann::json& j) {
  HeatmapGrid g;
  try {
    g.rows = j.at("rows").get<std::size_t>();
    g.days = j.at("days").get<std::size_t>();
    g.epoch_day0 = j.at("epoch_day0").get<std::int64_t>();
    g.model_version = j.at("model_version").get<std::uint64_t>();
    g.cells.assign(g.rows * g.days, {});
    g.row_labels.assign(g.rows, {});
    for (std::size_t r = 0; r < g.rows; ++r) {
      for (std::size_t d = 0; d < g.days; ++d) {
        auto& c = g.cell(r, d);
        c.count = j.at("counts").at(r).at(d).get<std::size_t>();
        c.intensity = j.at("intensities").at(r).at(d).get<double>();
        c.doc_ids = j.at("doc_ids").at(r).at(d).get<std::vector<std::string>>();
        for (const auto& id : c.doc_ids) g.placement[id] = {r, d};
      }
      for (const auto& l : j.at("row_labels").at(r)) g.row_labels[r].emplace_back(l.at("word"), l.at("score"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("grid export: malformed: ") + e.what());
  }
  return g;
}

}  // namespace tdt
