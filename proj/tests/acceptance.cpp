#include <chrono>
#include <cstdio>
#include <sstream>

#include "oracles.hpp"

using namespace tdt;

namespace {

int failures = 0;

void report(bool pass, const char* name, const std::string& detail) {
  std::printf("%s  %-24s %s\n", pass ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::string snapshot_bytes(const EventModelParams& m) {
  std::ostringstream out;
  save_snapshot(m, out);
  return out.str();
}

void hitl_improvement() {
  const auto sc = generate_corpus(SyntheticSpec{});
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run_loop(sc.corpus, sc.gold, 200, LoopConfig{});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& last = r.curve.back();
  const double gain = last.f1 - r.baseline.f1;
  const bool pass = last.judgments == 200 && gain >= 0.10 && last.row_purity > r.baseline.row_purity && secs < 300;
  report(pass, "hitl-improvement",
         fmt("F1 %.4f -> %.4f (gain %.4f, need >= 0.10); purity %.4f -> %.4f; %d judgments; %.1fs", r.baseline.f1,
             last.f1, gain, r.baseline.row_purity, last.row_purity, last.judgments, secs));
}

void heatmap_normalization() {
  Rng rng(2024);
  int grids = 0, bad = 0, skipped = 0;
  double worst = 0.0;
  while (grids < 120) {
    SyntheticSpec spec;
    spec.num_events = 1 + static_cast<int>(uniform_index(rng, 8));
    spec.docs_min = 1;
    spec.docs_max = 12;
    spec.days = 1 + static_cast<int>(uniform_index(rng, 30));
    spec.duration_min = 1;
    spec.duration_max = spec.days;
    spec.vocab_size = 400;
    spec.seed = rng();
    const auto sc = generate_corpus(spec);
    RandomProjectionEmbedder e(sc.corpus, 16, rng());
    const auto m = init_model({16, 4, 8}, sc.corpus.axis().num_days, rng(), e.id());
    const auto reps = represent_all(prepare_inputs(sc.corpus, e), m);
    const auto usable = std::count_if(reps.begin(), reps.end(), [](const Representation& r) { return !r.degenerate; });
    if (usable < 2) {  // topic axis undefined
      ++skipped;
      continue;
    }
    ++grids;
    const auto g = build_heatmap(sc.corpus, e, m, 1 + uniform_index(rng, 12));
    std::size_t total = 0;
    for (std::size_t d = 0; d < g.days; ++d) {
      double col = 0;
      std::size_t cnt = 0;
      for (std::size_t row = 0; row < g.rows; ++row) {
        col += g.cell(row, d).intensity;
        cnt += g.cell(row, d).count;
      }
      if (cnt > 0) {
        worst = std::max(worst, std::abs(col - 1.0));
        bad += std::abs(col - 1.0) > 1e-9;
      } else {
        bad += col != 0.0;
      }
      total += cnt;
    }
    bad += total != sc.corpus.size();
  }
  report(bad == 0, "heatmap-normalization",
         fmt("%d grids, %d violations, max |colsum-1| %.2e (%d corpora skipped: < 2 usable docs)", grids, bad, worst,
             skipped));
}

void gradient_check() {
  Rng rng(99);
  double worst = 0.0;
  int over = 0;
  for (int i = 0; i < 50; ++i) {
    const auto g = oracle::random_grad_point(rng, {8, 4, 4});
    const auto analytic = triplet_objective(g.model, g.inputs, g.triplets, g.margin);
    const auto numeric = oracle::numeric_gradient(g.model, g.inputs, g.triplets, g.margin, 1e-5);
    const double err = oracle::max_relative_error(analytic.grad, numeric);
    worst = std::max(worst, err);
    over += !(err < 1e-4);
  }
  report(over == 0, "gradient-correctness", fmt("50 points, h=1e-5, max relative error %.2e (limit 1e-4)", worst));
}

void mining_equivalence() {
  Rng rng(7);
  int batch_bad = 0, log_bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 32);
    std::vector<BatchItem> batch;
    for (std::size_t i = 0; i < n; ++i)
      batch.push_back({"doc" + std::to_string(i), std::string(1, static_cast<char>('A' + uniform_index(rng, 5)))});
    DistanceMatrix d(n, std::vector<double>(n, 0.0));
    const bool coarse = trial % 2 == 0;  // coarse grid forces ties
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double v = uniform(rng, 0, 2);
        d[i][j] = d[j][i] = coarse ? std::round(v * 4) / 4 : v;
      }
    batch_bad += mine_batch_hard(batch, d) != oracle::batch_hard(batch, d);
  }
  for (int trial = 0; trial < 200; ++trial) {
    JudgmentLog log;
    const auto h = oracle::random_history(rng, 50);
    for (const auto& j : h) log.append(j);
    log_bad += build_triplets(log) != oracle::enumerate_triplets(h);
  }
  report(batch_bad == 0 && log_bad == 0, "mining-oracle",
         fmt("batch-hard mismatches %d/200, triplet-build mismatches %d/200", batch_bad, log_bad));
}

void bcubed_correctness() {
  const Assignment gold{{"a", 0}, {"b", 0}, {"c", 1}};
  const auto perfect = bcubed(gold, gold);
  const auto merged = bcubed({{"a", 5}, {"b", 5}, {"c", 5}}, gold);
  const auto singles = bcubed({{"a", 0}, {"b", 1}, {"c", 2}}, gold);
  bool worked = perfect.precision == 1.0 && perfect.recall == 1.0 && perfect.f1 == 1.0;
  worked = worked && merged.precision == 5.0 / 9.0 && merged.recall == 1.0 && merged.f1 == 10.0 / 14.0;
  worked = worked && singles.precision == 1.0 && singles.recall == 2.0 / 3.0 && singles.f1 == 0.8;

  std::size_t pairs = 0, mismatches = 0;
  for (int n = 1; n <= 6; ++n) {
    const auto parts = oracle::partitions(n);
    auto to_assignment = [](const std::vector<int>& p) {
      Assignment a;
      for (std::size_t i = 0; i < p.size(); ++i) a["i" + std::to_string(i)] = p[i];
      return a;
    };
    for (const auto& p : parts)
      for (const auto& g : parts) {
        const auto pred = to_assignment(p), gl = to_assignment(g);
        const auto got = bcubed(pred, gl), want = oracle::bcubed(pred, gl);
        ++pairs;
        mismatches += std::abs(got.precision - want.precision) > 1e-12 || std::abs(got.recall - want.recall) > 1e-12 ||
                      std::abs(got.f1 - want.f1) > 1e-12;
      }
  }
  report(worked && mismatches == 0, "bcubed-correctness",
         fmt("worked examples %s; %zu partition pairs (n<=6), %zu mismatches", worked ? "exact" : "WRONG", pairs,
             mismatches));
}

void burst_visibility() {
  SyntheticSpec spec;
  const int burst_event = spec.num_events;
  spec.pinned.push_back({24, 30, 3, 0.0});
  const auto sc = generate_corpus(spec);
  const auto r = run_loop(sc.corpus, sc.gold, 200, LoopConfig{});
  const auto& g = r.final_grid;

  std::map<std::size_t, int> per_row;
  std::set<std::size_t> days;
  int n = 0;
  for (const auto& [id, e] : sc.gold) {
    if (e != burst_event) continue;
    ++n;
    const auto [row, day] = g.placement.at(id);
    ++per_row[row];
    days.insert(day);
  }
  auto best = std::max_element(per_row.begin(), per_row.end(),
                               [](const auto& a, const auto& b) { return a.second < b.second; });
  const double share = static_cast<double>(best->second) / n;

  std::vector<double> nonzero;
  for (const auto& c : g.cells)
    if (c.intensity > 0) nonzero.push_back(c.intensity);
  std::sort(nonzero.begin(), nonzero.end());
  const std::size_t k = nonzero.size();
  const double median = k % 2 ? nonzero[k / 2] : 0.5 * (nonzero[k / 2 - 1] + nonzero[k / 2]);
  double mean = 0.0;
  for (auto d : days) mean += g.cell(best->first, d).intensity;
  mean /= static_cast<double>(days.size());
  const double ratio = mean / median;

  report(share >= 0.70 && ratio >= 3.0, "burst-visibility",
         fmt("%d burst docs over %zu days; modal row %zu holds %.3f (need >= 0.70); row intensity %.3f vs median "
             "%.3f, ratio %.2f (need >= 3)",
             n, days.size(), best->first, share, mean, median, ratio));
}

void replay_determinism() {
  const auto sc = generate_corpus(SyntheticSpec{});
  const auto cfg = simulation_session();
  std::int64_t now = 1'700'000'000;
  Session live(cfg, [&] { return now; });
  live.upload_corpus(corpus_to_jsonl(sc.corpus));
  const SimAnnotator sim{sc.gold};
  LoopConfig walk_cfg;
  int used = 0;
  std::uint64_t serial = 0;
  for (int round = 0; round < 4; ++round) {
    RegionWalk walk(live.grid(), walk_cfg);
    const int target = used + 25;
    while (used < target) {
      auto region = walk.next();
      if (!region) break;
      for (int q = 0; q < walk_cfg.pairs_per_region && used < target; ++q) {
        auto question = live.region_question(*region);
        if (!question.ok()) break;
        const auto& docs = question.body["documents"];
        const auto pair = PairKey::of(docs[0]["id"].get<std::string>(), docs[1]["id"].get<std::string>());
        ++now;
        live.submit_judgment(question.body["token"], to_string(answer(pair, sim, serial++)), "sim");
        ++used;
      }
    }
    live.retrain();
  }

  Session fresh(cfg);
  fresh.upload_corpus(corpus_to_jsonl(sc.corpus));
  fresh.replay(live.log_lines());
  const auto a = snapshot_bytes(*live.model()), b = snapshot_bytes(*fresh.model());
  report(a == b && live.model()->version == 4, "replay-determinism",
         fmt("%d judgments, model version %llu vs %llu, snapshots %s (%zu bytes)", used,
             static_cast<unsigned long long>(live.model()->version),
             static_cast<unsigned long long>(fresh.model()->version), a == b ? "identical" : "DIFFER", a.size()));
}

}  // namespace

int main() {
  hitl_improvement();
  heatmap_normalization();
  gradient_check();
  mining_equivalence();
  bcubed_correctness();
  burst_visibility();
  replay_determinism();
  std::printf("%d of 7 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
