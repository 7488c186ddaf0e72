#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdt/events.hpp"
#include "tdt/heatmap.hpp"
#include "tdt/ingest.hpp"
#include "tdt/learn.hpp"
#include "tdt/session.hpp"

namespace tdt {

/// An event pinned to a fixed window, e.g. a short burst.
struct PinnedEvent {
  int docs = 20;
  int start_day = 0;
  int duration_days = 3;
  std::optional<double> background_rate;  // overrides the corpus-wide rate
};

struct SyntheticSpec {
  int num_events = 20;
  int docs_min = 15;
  int docs_max = 30;
  int days = 60;
  int duration_min = 3;
  int duration_max = 12;
  int vocab_size = 2000;
  int topic_words = 12;          // per-event topical word set
  int doc_length = 24;           // tokens per document
  double background_rate = 0.6;  // probability a token is drawn from the shared background pool
  std::int64_t start_epoch = 1609459200;  // 2021-01-01T00:00:00Z
  std::vector<PinnedEvent> pinned;        // appended after the random events
  std::uint64_t seed = 7;
};

struct SyntheticCorpus {
  Corpus corpus;
  Assignment gold;
  std::vector<std::vector<std::string>> event_words;
};

/// Pronounceable, unique word for an index (base-20 syllables).
inline std::string synthetic_word(int index) {
  static constexpr const char* syl[] = {"ba", "ko", "ri", "mu", "te", "sa", "lo", "ni", "fe", "du",
                                        "ga", "pe", "zo", "vi", "ha", "ju", "ne", "wo", "ki", "ta"};
  std::string w;
  int v = index;
  for (int k = 0; k < 3; ++k) {
    w += syl[v % 20];
    v /= 20;
  }
  if (v > 0) w += std::to_string(v);
  return w;
}

/// Events get contiguous day windows and pairwise disjoint topical word sets;
/// each document mixes its event's words with shared background words.
inline SyntheticCorpus generate_corpus(const SyntheticSpec& spec) {
  const int total_events = spec.num_events + static_cast<int>(spec.pinned.size());
  if (spec.num_events < 0 || total_events < 1) throw Error("synthetic spec: need at least one event");
  if (spec.docs_min < 1 || spec.docs_max < spec.docs_min) throw Error("synthetic spec: bad docs-per-event range");
  if (spec.days < 1 || spec.duration_min < 1 || spec.duration_max < spec.duration_min)
    throw Error("synthetic spec: bad day ranges");
  if (spec.topic_words < 1 || spec.doc_length < 1) throw Error("synthetic spec: bad word counts");
  if (!(spec.background_rate >= 0.0 && spec.background_rate < 1.0))
    throw Error("synthetic spec: background_rate must lie in [0, 1)");
  const int topical = total_events * spec.topic_words;
  if (spec.vocab_size < topical + 1)
    throw Error("synthetic spec: vocabulary of " + std::to_string(spec.vocab_size) + " is too small for " +
                std::to_string(total_events) + " disjoint topical sets of " + std::to_string(spec.topic_words));
  for (const auto& p : spec.pinned) {
    if (p.background_rate && !(*p.background_rate >= 0.0 && *p.background_rate < 1.0))
      throw Error("synthetic spec: pinned background_rate must lie in [0, 1)");
    if (p.docs < 1 || p.duration_days < 1 || p.start_day < 0 || p.start_day + p.duration_days > spec.days)
      throw Error("synthetic spec: pinned event outside the day range");
  }

  Rng rng(spec.seed);
  std::vector<int> word_ids(static_cast<std::size_t>(spec.vocab_size));
  for (int i = 0; i < spec.vocab_size; ++i) word_ids[i] = i;
  shuffle(word_ids, rng);

  SyntheticCorpus out;
  out.event_words.resize(static_cast<std::size_t>(total_events));
  for (int e = 0; e < total_events; ++e)
    for (int w = 0; w < spec.topic_words; ++w)
      out.event_words[e].push_back(synthetic_word(word_ids[static_cast<std::size_t>(e * spec.topic_words + w)]));
  std::vector<std::string> background;
  for (int i = topical; i < spec.vocab_size; ++i) background.push_back(synthetic_word(word_ids[static_cast<std::size_t>(i)]));

  std::vector<Document> docs;
  int serial = 0;
  for (int e = 0; e < total_events; ++e) {
    int n, start, duration;
    double bg_rate = spec.background_rate;
    if (e < spec.num_events) {
      n = spec.docs_min + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(spec.docs_max - spec.docs_min + 1)));
      duration = std::min(spec.days, spec.duration_min + static_cast<int>(uniform_index(
                                                              rng, static_cast<std::uint64_t>(spec.duration_max - spec.duration_min + 1))));
      start = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(spec.days - duration + 1)));
    } else {
      const auto& p = spec.pinned[static_cast<std::size_t>(e - spec.num_events)];
      n = p.docs;
      start = p.start_day;
      duration = p.duration_days;
      if (p.background_rate) bg_rate = *p.background_rate;
    }
    const auto& words = out.event_words[static_cast<std::size_t>(e)];
    for (int i = 0; i < n; ++i) {
      Document d;
      char id[32];
      std::snprintf(id, sizeof(id), "doc-%05d", serial++);
      d.id = id;
      const auto day = start + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(duration)));
      d.timestamp = spec.start_epoch + static_cast<std::int64_t>(day) * kSecondsPerDay +
                    static_cast<std::int64_t>(uniform_index(rng, kSecondsPerDay));
      std::string text;
      for (int t = 0; t < spec.doc_length; ++t) {
        const bool bg = uniform01(rng) < bg_rate;
        const auto& pool = bg ? background : words;
        if (!text.empty()) text += ' ';
        text += pool[uniform_index(rng, pool.size())];
      }
      d.text = std::move(text);
      d.source = "synthetic";
      out.gold[d.id] = e;
      docs.push_back(std::move(d));
    }
  }
  out.corpus = Corpus::from_documents(std::move(docs));
  return out;
}

struct SimAnnotator {
  Assignment gold;
  double noise_rate = 0.0;
  std::string name = "simulated";
};

/// Gold same/different relation, flipped with probability `noise_rate`.
inline Label answer(const PairKey& pair, const SimAnnotator& sim, std::uint64_t seed) {
  if (!(sim.noise_rate >= 0.0 && sim.noise_rate < 0.5)) throw Error("annotator: noise_rate must lie in [0, 0.5)");
  auto a = sim.gold.find(pair.first), b = sim.gold.find(pair.second);
  if (a == sim.gold.end()) throw Error("annotator: unknown document '" + pair.first + "'");
  if (b == sim.gold.end()) throw Error("annotator: unknown document '" + pair.second + "'");
  bool same = a->second == b->second;
  Rng rng(splitmix64(seed));
  if (sim.noise_rate > 0.0 && uniform01(rng) < sim.noise_rate) same = !same;
  return same ? Label::SameEvent : Label::DifferentEvent;
}

/// Session settings used by the simulated loop: batch-hard mining over
/// provisional groups at a higher learning rate than interactive use.
inline SessionConfig simulation_session() {
  SessionConfig c;
  c.train.mining_mode = MiningMode::BatchHard;
  c.train.learning_rate = 0.2;
  return c;
}

struct LoopConfig {
  int retrain_every = 25;
  std::size_t rows = kDefaultRows;
  int pairs_per_region = 4;
  std::size_t row_halfwidth = 1;
  std::size_t day_halfwidth = 1;
  double noise_rate = 0.0;
  std::uint64_t seed = 11;
  SessionConfig session = simulation_session();
};

struct CurvePoint {
  int judgments = 0;
  double f1 = 0.0;
  double row_purity = 0.0;
  std::uint64_t model_version = 0;
  bool retrained = false;
};

struct LoopResult {
  CurvePoint baseline;
  std::vector<CurvePoint> curve;
  int triplets = 0;
  HeatmapGrid final_grid;
  EventModelParams final_model;
};

/// Darkest-first walk over the current grid: each visit opens the bounding
/// region around one unexplored cell and asks up to `pairs_per_region`
/// questions there.
class RegionWalk {
 public:
  RegionWalk(const HeatmapGrid& grid, const LoopConfig& cfg) : cfg_(cfg), rows_(grid.rows), days_(grid.days) {
    for (std::size_t r = 0; r < grid.rows; ++r)
      for (std::size_t d = 0; d < grid.days; ++d)
        if (grid.cell(r, d).count > 0) order_.push_back({grid.cell(r, d).intensity, grid.cell(r, d).count, r, d});
    std::sort(order_.begin(), order_.end(), [](const Entry& a, const Entry& b) {
      if (a.intensity != b.intensity) return a.intensity > b.intensity;
      if (a.count != b.count) return a.count > b.count;
      return a.row != b.row ? a.row < b.row : a.day < b.day;
    });
  }

  std::optional<Region> next() {
    if (pos_ >= order_.size()) return std::nullopt;
    const auto& e = order_[pos_++];
    Region r;
    r.row_lo = e.row >= cfg_.row_halfwidth ? e.row - cfg_.row_halfwidth : 0;
    r.row_hi = std::min(rows_ - 1, e.row + cfg_.row_halfwidth);
    r.day_lo = e.day >= cfg_.day_halfwidth ? e.day - cfg_.day_halfwidth : 0;
    r.day_hi = std::min(days_ - 1, e.day + cfg_.day_halfwidth);
    return r;
  }

 private:
  struct Entry {
    double intensity;
    std::size_t count;
    std::size_t row, day;
  };
  const LoopConfig& cfg_;
  std::size_t rows_, days_;
  std::vector<Entry> order_;
  std::size_t pos_ = 0;
};

inline CurvePoint measure(Session& session, const Assignment& gold, std::size_t rows, int judgments) {
  (void)session.heatmap(rows);
  auto eval = session.evaluation(nlohmann::json(gold), std::nullopt);
  if (!eval.ok()) throw Error("loop: evaluation failed: " + eval.body.value("error", std::string()));
  CurvePoint p;
  p.judgments = judgments;
  p.f1 = eval.body["f1"].get<double>();
  p.row_purity = eval.body["row_purity"].get<double>();
  p.model_version = eval.body["model_version"].get<std::uint64_t>();
  return p;
}

/// Simulated HITL loop through the session API: pick regions, ask pairs,
/// answer from gold, retrain every `retrain_every` judgments and at the end.
inline LoopResult run_loop(const Corpus& corpus, const Assignment& gold, int budget, const LoopConfig& cfg) {
  if (budget < 1) throw Error("run_loop: budget must be >= 1");
  if (cfg.retrain_every < 1) throw Error("run_loop: retrain_every must be >= 1");
  SessionConfig sc = cfg.session;
  sc.default_rows = cfg.rows;
  sc.data_dir.clear();
  std::int64_t fake_now = 1'700'000'000;
  Session session(sc, [&] { return fake_now; });
  if (auto r = session.upload_corpus(corpus_to_jsonl(corpus)); !r.ok())
    throw Error("run_loop: corpus upload failed: " + r.body.value("error", std::string()));

  SimAnnotator sim{gold, cfg.noise_rate, "simulated"};
  LoopResult result;
  result.baseline = measure(session, gold, cfg.rows, 0);

  int used = 0;
  std::uint64_t answer_serial = 0;
  while (used < budget) {
    const int target = std::min(budget, used + cfg.retrain_every);
    RegionWalk walk(session.grid(cfg.rows), cfg);
    while (used < target) {
      auto region = walk.next();
      if (!region) break;
      for (int q = 0; q < cfg.pairs_per_region && used < target; ++q) {
        auto question = session.region_question(*region, cfg.rows);
        if (question.body["status"] != "ok") break;
        const auto& docs = question.body["documents"];
        const auto pair = PairKey::of(docs[0]["id"].get<std::string>(), docs[1]["id"].get<std::string>());
        const Label label = answer(pair, sim, splitmix64(cfg.seed) ^ answer_serial++);
        ++fake_now;
        auto ack = session.submit_judgment(question.body["token"].get<std::string>(), to_string(label), sim.name);
        if (!ack.ok()) throw Error("run_loop: judgment rejected: " + ack.body.value("error", std::string()));
        ++used;
      }
    }
    const bool stalled = used < target;
    auto rt = session.retrain();
    CurvePoint p = measure(session, gold, cfg.rows, used);
    p.retrained = rt.ok();
    result.curve.push_back(p);
    if (stalled) break;  // every region exhausted
  }
  result.triplets = static_cast<int>(build_triplets(session.judgments()).size());
  result.final_grid = session.grid(cfg.rows);
  result.final_model = *session.model();
  return result;
}

inline std::string curve_to_csv(const LoopResult& r) {
  std::string out = "judgments,f1,row_purity,model_version\n";
  auto row = [&](const CurvePoint& p) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%llu\n", p.judgments, p.f1, p.row_purity,
                  static_cast<unsigned long long>(p.model_version));
    out += buf;
  };
  row(r.baseline);
  for (const auto& p : r.curve) row(p);
  return out;
}

}  // namespace tdt
