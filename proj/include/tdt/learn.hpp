#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdt/common.hpp"
#include "tdt/ingest.hpp"
#include "tdt/repr.hpp"

namespace tdt {

enum class Label { SameEvent, DifferentEvent };

inline std::string to_string(Label l) { return l == Label::SameEvent ? "same-event" : "different-event"; }

inline std::optional<Label> parse_label(std::string_view s) {
  if (s == "same-event") return Label::SameEvent;
  if (s == "different-event") return Label::DifferentEvent;
  return std::nullopt;
}

/// Unordered document pair stored as (lexicographically smaller, larger).
struct PairKey {
  std::string first;
  std::string second;

  static PairKey of(std::string a, std::string b) {
    if (b < a) std::swap(a, b);
    return {std::move(a), std::move(b)};
  }
  auto operator<=>(const PairKey&) const = default;
};

struct PairJudgment {
  std::string doc_a;
  std::string doc_b;
  Label label = Label::SameEvent;
  std::string annotator;
  std::int64_t created_at = 0;

  PairKey pair() const { return PairKey::of(doc_a, doc_b); }
  bool operator==(const PairJudgment&) const = default;
};

inline nlohmann::json to_json(const PairJudgment& j) {
  return {{"doc_a", j.doc_a}, {"doc_b", j.doc_b}, {"label", to_string(j.label)}, {"annotator", j.annotator},
          {"created_at", j.created_at}};
}

inline PairJudgment judgment_from_json(const nlohmann::json& rec) {
  PairJudgment j;
  try {
    j.doc_a = rec.at("doc_a").get<std::string>();
    j.doc_b = rec.at("doc_b").get<std::string>();
    j.annotator = rec.at("annotator").get<std::string>();
    j.created_at = rec.at("created_at").get<std::int64_t>();
    auto label = parse_label(rec.at("label").get<std::string>());
    if (!label) throw Error("judgment: unknown label '" + rec.at("label").get<std::string>() + "'");
    j.label = *label;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("judgment: malformed record: ") + e.what());
  }
  return j;
}

/// In-memory judgment state: full history plus the current label per
/// (pair, annotator). A relabel by the same annotator replaces the current
/// label and keeps the earlier record in the history.
class JudgmentLog {
 public:
  const std::vector<PairJudgment>& history() const { return history_; }
  std::size_t size() const { return history_.size(); }
  bool empty() const { return history_.empty(); }

  std::optional<Label> current(const PairKey& pair, const std::string& annotator) const {
    auto it = current_.find({pair, annotator});
    if (it == current_.end()) return std::nullopt;
    return it->second;
  }

  /// Per-pair history length (all annotators).
  std::size_t history_length(const PairKey& pair) const {
    return static_cast<std::size_t>(std::count_if(history_.begin(), history_.end(),
                                                  [&](const PairJudgment& j) { return j.pair() == pair; }));
  }

  /// Canonicalizes and appends without corpus validation; replay uses this.
  void append(PairJudgment j) {
    if (j.doc_a == j.doc_b) throw Error("judgment: a document cannot be paired with itself ('" + j.doc_a + "')");
    if (j.doc_b < j.doc_a) std::swap(j.doc_a, j.doc_b);
    current_[{j.pair(), j.annotator}] = j.label;
    history_.push_back(std::move(j));
  }

  /// Majority label per pair across annotators' current labels; tied pairs are
  /// left out.
  std::map<PairKey, Label> consensus() const {
    std::map<PairKey, std::pair<int, int>> votes;
    for (const auto& [key, label] : current_) {
      auto& v = votes[key.first];
      (label == Label::SameEvent ? v.first : v.second)++;
    }
    std::map<PairKey, Label> out;
    for (const auto& [pair, v] : votes)
      if (v.first != v.second) out.emplace(pair, v.first > v.second ? Label::SameEvent : Label::DifferentEvent);
    return out;
  }

  struct CurrentEntry {
    PairKey pair;
    std::string annotator;
    Label label;
  };

  /// Latest label of every (pair, annotator), ordered by pair then annotator.
  std::vector<CurrentEntry> current_entries() const {
    std::vector<CurrentEntry> out;
    for (const auto& [key, label] : current_) out.push_back({key.first, key.second, label});
    return out;
  }

  std::set<PairKey> pairs() const {
    std::set<PairKey> out;
    for (const auto& j : history_) out.insert(j.pair());
    return out;
  }

 private:
  std::vector<PairJudgment> history_;
  std::map<std::pair<PairKey, std::string>, Label> current_;
};

/// Validates ids against the corpus, then appends.
inline JudgmentLog& record_judgment(const PairJudgment& j, JudgmentLog& log, const Corpus& corpus) {
  if (j.doc_a == j.doc_b) throw Error("judgment: a document cannot be paired with itself ('" + j.doc_a + "')");
  for (const auto* id : {&j.doc_a, &j.doc_b})
    if (!corpus.contains(*id)) throw Error("judgment: unknown document id '" + *id + "'");
  log.append(j);
  return log;
}

struct Triplet {
  std::string anchor;
  std::string positive;
  std::string negative;
  auto operator<=>(const Triplet&) const = default;
};

/// Every (x, p, n) where x has a current same-event pair with p and a current
/// different-event pair with n, sorted by ids.
inline std::vector<Triplet> build_triplets(const JudgmentLog& log) {
  std::map<std::string, std::pair<std::set<std::string>, std::set<std::string>>> by_anchor;
  for (const auto& [pair, label] : log.consensus()) {
    auto add = [&](const std::string& x, const std::string& y) {
      auto& e = by_anchor[x];
      (label == Label::SameEvent ? e.first : e.second).insert(y);
    };
    add(pair.first, pair.second);
    add(pair.second, pair.first);
  }
  std::vector<Triplet> out;
  for (const auto& [anchor, sets] : by_anchor)
    for (const auto& p : sets.first)
      for (const auto& n : sets.second) out.push_back({anchor, p, n});
  return out;
}

/// Provisional event labels for batch-hard mining: connected components of the
/// consensus same-event graph. Only documents in at least one same-event pair
/// are labeled; the label is the smallest id in the component.
inline std::vector<std::pair<std::string, std::string>> provisional_groups(const JudgmentLog& log) {
  std::map<std::string, std::string> parent;
  auto find = [&](std::string x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (const auto& [pair, label] : log.consensus()) {
    if (label != Label::SameEvent) continue;
    for (const auto* id : {&pair.first, &pair.second})
      if (!parent.contains(*id)) parent[*id] = *id;
    auto ra = find(pair.first), rb = find(pair.second);
    if (ra != rb) {
      if (rb < ra) std::swap(ra, rb);
      parent[rb] = ra;
    }
  }
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [id, p] : parent) out.emplace_back(id, find(id));
  return out;
}

struct BatchItem {
  std::string id;
  std::string label;
};

/// Symmetric pairwise distance lookup over the items of one batch.
using DistanceMatrix = std::vector<std::vector<double>>;

/// Batch-hard selection from a precomputed distance matrix. For each anchor
/// with an in-batch positive and negative: the farthest same-label item and
/// the nearest different-label item, ties going to the smaller document id.
/// Anchors are emitted in batch order.
inline std::vector<Triplet> mine_batch_hard(std::span<const BatchItem> batch, const DistanceMatrix& dist) {
  std::vector<Triplet> out;
  const std::size_t n = batch.size();
  for (std::size_t a = 0; a < n; ++a) {
    std::optional<std::size_t> pos, neg;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a || batch[j].id == batch[a].id) continue;
      const double dj = dist[a][j];
      if (batch[j].label == batch[a].label) {
        if (!pos || dj > dist[a][*pos] || (dj == dist[a][*pos] && batch[j].id < batch[*pos].id)) pos = j;
      } else {
        if (!neg || dj < dist[a][*neg] || (dj == dist[a][*neg] && batch[j].id < batch[*neg].id)) neg = j;
      }
    }
    if (pos && neg) out.push_back({batch[a].id, batch[*pos].id, batch[*neg].id});
  }
  return out;
}

/// Computes event-space representations under `model` and mines the batch.
/// Degenerate documents are dropped from the batch.
inline std::vector<Triplet> mine_batch_hard(std::span<const BatchItem> batch, const EventModelParams& model,
                                            const std::unordered_map<std::string, const DocInput*>& inputs) {
  std::vector<BatchItem> kept;
  std::vector<DenseVector> reprs;
  for (const auto& item : batch) {
    auto it = inputs.find(item.id);
    if (it == inputs.end()) throw Error("mine_batch_hard: unknown document id '" + item.id + "'");
    auto r = event_repr(*it->second, model);
    if (r.degenerate) continue;
    kept.push_back(item);
    reprs.push_back(std::move(r.vec));
  }
  DistanceMatrix dist(kept.size(), std::vector<double>(kept.size(), 0.0));
  for (std::size_t i = 0; i < kept.size(); ++i)
    for (std::size_t j = i + 1; j < kept.size(); ++j) dist[i][j] = dist[j][i] = 1.0 - dot(reprs[i], reprs[j]);
  return mine_batch_hard(kept, dist);
}

/// Hinge on cosine distance: max(0, dist(a,p) - dist(a,n) + margin).
inline double triplet_loss(std::span<const double> a, std::span<const double> p, std::span<const double> n,
                           double margin) {
  return std::max(0.0, distance(a, p) - distance(a, n) + margin);
}

enum class MiningMode { Offline, BatchHard };

inline std::string to_string(MiningMode m) { return m == MiningMode::Offline ? "offline" : "batch-hard"; }

inline std::optional<MiningMode> parse_mining_mode(std::string_view s) {
  if (s == "offline") return MiningMode::Offline;
  if (s == "batch-hard") return MiningMode::BatchHard;
  return std::nullopt;
}

struct TrainConfig {
  double margin = 0.2;
  double learning_rate = 0.05;
  int epochs = 20;
  int batch_size = 16;
  MiningMode mining_mode = MiningMode::Offline;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(margin > 0.0)) throw Error("train config: margin must be > 0");
    if (!(learning_rate > 0.0)) throw Error("train config: learning_rate must be > 0");
    if (epochs < 1) throw Error("train config: epochs must be >= 1");
    if (batch_size < 4) throw Error("train config: batch_size must be >= 4");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"margin", c.margin},         {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},         {"batch_size", c.batch_size},
          {"mining_mode", to_string(c.mining_mode)}, {"seed", c.seed}};
}

/// Applies the keys present in `j` on top of `base`.
inline TrainConfig apply_overrides(TrainConfig base, const nlohmann::json& j) {
  if (j.is_null()) return base;
  if (!j.is_object()) throw Error("train config: overrides must be an object");
  try {
    if (j.contains("margin")) base.margin = j["margin"].get<double>();
    if (j.contains("learning_rate")) base.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("epochs")) base.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size")) base.batch_size = j["batch_size"].get<int>();
    if (j.contains("seed")) base.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("mining_mode")) {
      auto m = parse_mining_mode(j["mining_mode"].get<std::string>());
      if (!m) throw Error("train config: mining_mode must be 'offline' or 'batch-hard'");
      base.mining_mode = *m;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("train config: ") + e.what());
  }
  base.validate();
  return base;
}

// ---------------------------------------------------------------------------
// Gradients

/// Backpropagates dL/d(repr) through the head, fusion and time embedding,
/// accumulating into `grad`. The base embedding is frozen.
inline void backward(const ReprTrace& tr, double time_input, const EventModelParams& model,
                     std::span<const double> grad_repr, EventModelParams& grad) {
  if (tr.repr.degenerate) return;
  const auto& f = tr.fusion;
  const std::size_t d = f.text.size();
  const std::size_t m = tr.head_out.size();
  const auto& e = tr.repr.vec;

  // e = y / |y|
  const double eg = dot(e, grad_repr);
  DenseVector gy(m);
  for (std::size_t j = 0; j < m; ++j) gy[j] = (grad_repr[j] - e[j] * eg) / tr.head_norm;

  // y = z A
  add_outer(grad.head.a, f.out, gy);
  const DenseVector gz = times_col(model.head.a, gy);

  // z = w0 v0 + w1 v1 + x
  DenseVector gv[2] = {DenseVector(d), DenseVector(d)};
  double gw[2];
  for (int t = 0; t < 2; ++t) {
    for (std::size_t i = 0; i < d; ++i) gv[t][i] = f.weight[t] * gz[i];
    gw[t] = dot(gz, f.value[t]);
  }
  const double wbar = f.weight[0] * gw[0] + f.weight[1] * gw[1];
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  double gs[2];
  for (int t = 0; t < 2; ++t) gs[t] = f.weight[t] * (gw[t] - wbar) * scale;

  // s_t = q . k_t / sqrt(d)
  DenseVector gq(d, 0.0);
  DenseVector gk[2] = {DenseVector(d), DenseVector(d)};
  for (std::size_t i = 0; i < d; ++i) {
    gq[i] = gs[0] * f.key[0][i] + gs[1] * f.key[1][i];
    gk[0][i] = gs[0] * f.query[i];
    gk[1][i] = gs[1] * f.query[i];
  }

  add_outer(grad.fusion.wq, f.text, gq);
  add_outer(grad.fusion.wk, f.text, gk[0]);
  add_outer(grad.fusion.wk, f.lifted, gk[1]);
  add_outer(grad.fusion.wv, f.text, gv[0]);
  add_outer(grad.fusion.wv, f.lifted, gv[1]);

  // lifted token feeds key 1 and value 1
  DenseVector gu = times_col(model.fusion.wk, gk[1]);
  const DenseVector gu_v = times_col(model.fusion.wv, gv[1]);
  for (std::size_t i = 0; i < d; ++i) gu[i] += gu_v[i];

  add_outer(grad.fusion.lift, tr.time_vec, gu);
  const DenseVector gtau = times_col(model.fusion.lift, gu);

  const auto& tp = model.time;
  grad.time.omega[0] += time_input * gtau[0];
  grad.time.phi[0] += gtau[0];
  for (std::size_t i = 1; i < gtau.size(); ++i) {
    const double c = std::cos(tp.omega[i] * time_input + tp.phi[i]) * gtau[i];
    grad.time.omega[i] += time_input * c;
    grad.time.phi[i] += c;
  }
}

/// Triplet expressed as positions into an input table.
struct IndexTriplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
};

struct LossAndGrad {
  double loss = 0.0;
  std::size_t active = 0;
  std::size_t used = 0;  // triplets with no degenerate member
  EventModelParams grad;
};

/// Mean hinge loss over the usable triplets (no degenerate member) and its
/// gradient. Inactive triplets contribute zero loss and zero gradient; the
/// hinge subgradient at the kink is zero.
inline LossAndGrad triplet_objective(const EventModelParams& model, std::span<const DocInput> inputs,
                                     std::span<const IndexTriplet> triplets, double margin, bool want_grad = true) {
  LossAndGrad res;
  if (want_grad) res.grad = zeros_like(model);
  std::map<std::size_t, ReprTrace> traces;
  auto trace = [&](std::size_t i) -> const ReprTrace& {
    auto it = traces.find(i);
    if (it == traces.end()) it = traces.emplace(i, event_repr_trace(inputs[i], model)).first;
    return it->second;
  };
  std::map<std::size_t, DenseVector> grad_repr;
  auto accum = [&](std::size_t i, std::span<const double> g, double s) {
    auto& v = grad_repr[i];
    if (v.empty()) v.assign(g.size(), 0.0);
    for (std::size_t j = 0; j < g.size(); ++j) v[j] += s * g[j];
  };
  std::vector<std::size_t> usable;
  for (std::size_t t = 0; t < triplets.size(); ++t) {
    const auto& tri = triplets[t];
    if (trace(tri.anchor).repr.degenerate || trace(tri.positive).repr.degenerate ||
        trace(tri.negative).repr.degenerate)
      continue;
    usable.push_back(t);
  }
  res.used = usable.size();
  if (usable.empty()) return res;
  const double inv = 1.0 / static_cast<double>(usable.size());
  for (std::size_t t : usable) {
    const auto& tri = triplets[t];
    const auto& ea = trace(tri.anchor).repr.vec;
    const auto& ep = trace(tri.positive).repr.vec;
    const auto& en = trace(tri.negative).repr.vec;
    const double h = dot(ea, en) - dot(ea, ep) + margin;
    if (h <= 0.0) continue;
    res.loss += h * inv;
    ++res.active;
    if (!want_grad) continue;
    // d/d ea of (ea.en - ea.ep) = en - ep
    DenseVector diff(ea.size());
    for (std::size_t j = 0; j < ea.size(); ++j) diff[j] = en[j] - ep[j];
    accum(tri.anchor, diff, inv);
    accum(tri.positive, ea, -inv);
    accum(tri.negative, ea, inv);
  }
  if (want_grad)
    for (const auto& [i, g] : grad_repr) backward(trace(i), inputs[i].time, model, g, res.grad);
  return res;
}

// ---------------------------------------------------------------------------
// Training

struct TrainingData {
  std::vector<Triplet> triplets;     // offline mode
  std::vector<BatchItem> labeled;    // batch-hard mode
};

struct TrainStats {
  std::size_t steps = 0;
  double first_epoch_loss = 0.0;
  double last_epoch_loss = 0.0;
};

/// Id -> position lookup over a frozen input table.
class InputTable {
 public:
  InputTable() = default;
  InputTable(std::vector<std::string> ids, std::vector<DocInput> inputs) : ids_(std::move(ids)), inputs_(std::move(inputs)) {
    if (ids_.size() != inputs_.size()) throw Error("input table: ids and inputs differ in length");
    for (std::size_t i = 0; i < ids_.size(); ++i) index_.emplace(ids_[i], i);
  }
  InputTable(const Corpus& corpus, const BaseEmbedder& embedder) {
    for (const auto& d : corpus.documents()) ids_.push_back(d.id);
    inputs_ = prepare_inputs(corpus, embedder);
    for (std::size_t i = 0; i < ids_.size(); ++i) index_.emplace(ids_[i], i);
  }

  std::size_t position(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error("unknown document id '" + id + "'");
    return it->second;
  }
  const std::vector<DocInput>& inputs() const { return inputs_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const DocInput& input(std::size_t i) const { return inputs_.at(i); }
  std::unordered_map<std::string, const DocInput*> lookup() const {
    std::unordered_map<std::string, const DocInput*> out;
    for (std::size_t i = 0; i < ids_.size(); ++i) out.emplace(ids_[i], &inputs_[i]);
    return out;
  }

 private:
  std::vector<std::string> ids_;
  std::vector<DocInput> inputs_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline void sgd_step(EventModelParams& model, const EventModelParams& grad, double lr) {
  std::vector<std::span<const double>> g;
  for_each_parameter(grad, [&](const char*, std::span<const double> s) { g.push_back(s); });
  std::size_t k = 0;
  for_each_parameter(model, [&](const char*, std::span<double> s) {
    const auto& gs = g[k++];
    for (std::size_t i = 0; i < s.size(); ++i) s[i] -= lr * gs[i];
  });
}

/// Mini-batch gradient descent on the mean triplet loss. Offline mode shuffles
/// the given triplets each epoch; batch-hard mode shuffles labeled documents
/// and mines each batch under the current parameters. Returns a new snapshot
/// with version + 1.
inline EventModelParams train(const EventModelParams& model, const TrainingData& data, const TrainConfig& config,
                              const InputTable& table, TrainStats* stats = nullptr) {
  config.validate();
  EventModelParams cur = model;
  TrainStats st;
  Rng rng(config.seed);
  const auto batch = static_cast<std::size_t>(config.batch_size);

  auto step = [&](const std::vector<IndexTriplet>& tris) -> double {
    auto lg = triplet_objective(cur, table.inputs(), tris, config.margin);
    if (lg.active > 0) sgd_step(cur, lg.grad, config.learning_rate);
    ++st.steps;
    return lg.loss;
  };

  if (config.mining_mode == MiningMode::Offline) {
    if (data.triplets.empty()) throw Error("train: no training triplets");
    std::vector<IndexTriplet> all;
    all.reserve(data.triplets.size());
    for (const auto& t : data.triplets)
      all.push_back({table.position(t.anchor), table.position(t.positive), table.position(t.negative)});
    std::vector<std::size_t> order(all.size());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      shuffle(order, rng);
      double epoch_loss = 0.0;
      for (std::size_t start = 0; start < order.size(); start += batch) {
        std::vector<IndexTriplet> chunk;
        for (std::size_t i = start; i < std::min(order.size(), start + batch); ++i) chunk.push_back(all[order[i]]);
        epoch_loss += step(chunk) * static_cast<double>(chunk.size());
      }
      epoch_loss /= static_cast<double>(all.size());
      if (epoch == 0) st.first_epoch_loss = epoch_loss;
      st.last_epoch_loss = epoch_loss;
    }
  } else {
    std::map<std::string, int> label_sizes;
    for (const auto& b : data.labeled) ++label_sizes[b.label];
    const bool has_group = std::any_of(label_sizes.begin(), label_sizes.end(), [](auto& kv) { return kv.second >= 2; });
    if (data.labeled.empty() || label_sizes.size() < 2 || !has_group)
      throw Error("train: batch-hard mode needs at least two labels, one with two or more documents");
    const auto lookup = table.lookup();
    std::vector<BatchItem> items = data.labeled;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      shuffle(items, rng);
      double epoch_loss = 0.0;
      std::size_t batches = 0;
      for (std::size_t start = 0; start < items.size(); start += batch) {
        std::span<const BatchItem> chunk(items.data() + start, std::min(batch, items.size() - start));
        auto mined = mine_batch_hard(chunk, cur, lookup);
        if (mined.empty()) continue;
        std::vector<IndexTriplet> tris;
        for (const auto& t : mined)
          tris.push_back({table.position(t.anchor), table.position(t.positive), table.position(t.negative)});
        epoch_loss += step(tris);
        ++batches;
      }
      if (batches > 0) epoch_loss /= static_cast<double>(batches);
      if (epoch == 0) st.first_epoch_loss = epoch_loss;
      st.last_epoch_loss = epoch_loss;
    }
  }
  cur.version = model.version + 1;
  if (stats) *stats = st;
  return cur;
}

}  // namespace tdt
