#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace tdt;

namespace {

Document doc(std::string id, std::int64_t day, std::string text) {
  Document d;
  d.id = std::move(id);
  d.timestamp = day * kSecondsPerDay + 3600;
  d.text = std::move(text);
  return d;
}

HeatmapGrid grid_with_rows(const Corpus& c, const std::map<std::string, std::size_t>& rows, std::size_t m) {
  std::vector<std::size_t> r;
  for (const auto& d : c.documents()) r.push_back(rows.at(d.id));
  return assemble_grid(c, r, m, 0);
}

}  // namespace

TEST(TopicAxis, MatchesEigenDecomposition) {
  const std::vector<DenseVector> v{{1, 0}, {-1, 0}, {0, 0.1}};
  const auto s = project_topic_axis(v);
  // 2x2 covariance of the centered rows; leading eigenvector in closed form
  const double my = 0.1 / 3;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& x : v) {
    sxx += x[0] * x[0];
    sxy += x[0] * (x[1] - my);
    syy += (x[1] - my) * (x[1] - my);
  }
  const double lambda = 0.5 * (sxx + syy + std::sqrt((sxx - syy) * (sxx - syy) + 4 * sxy * sxy));
  DenseVector e{sxy, lambda - sxx};
  if (std::abs(sxy) < 1e-300) e = {1, 0};
  const double n = norm(e);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s[i], (v[i][0] * e[0] + (v[i][1] - my) * e[1]) / n, 1e-6);
  EXPECT_NEAR(s[0], 1, 1e-6);
  EXPECT_NEAR(s[1], -1, 1e-6);
  EXPECT_NEAR(s[2], 0, 1e-6);
}

TEST(TopicAxis, SymmetryDuplicatesAndErrors) {
  const auto s = project_topic_axis(std::vector<DenseVector>{{0.6, 0.8}, {-0.6, -0.8}});
  EXPECT_NEAR(s[0], -s[1], 1e-12);
  EXPECT_GT(std::abs(s[0]), 0.9);

  Rng rng(3);
  std::vector<DenseVector> base;
  for (int i = 0; i < 6; ++i) base.push_back(oracle::random_unit(rng, 5));
  auto doubled = base;
  doubled.insert(doubled.end(), base.begin(), base.end());
  const auto d = project_topic_axis(doubled);
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(d[i], d[i + base.size()]);

  EXPECT_THROW(project_topic_axis(std::vector<DenseVector>{{1, 0}, {1, 0}}), Error);
  EXPECT_THROW(project_topic_axis(std::vector<DenseVector>{{1, 0}}), Error);
}

TEST(TopicAxis, DegenerateScoresZero) {
  std::vector<Representation> r{{{1, 0}, false}, {{0, 0}, true}, {{-1, 0}, false}};
  const auto s = project_topic_axis(std::span<const Representation>(r));
  EXPECT_EQ(s[1], 0.0);
  EXPECT_NEAR(s[0], 1, 1e-9);
}

TEST(Bucketize, Examples) {
  EXPECT_EQ(bucketize(std::vector<double>{1, 2, 3, 4}, 2), (std::vector<std::size_t>{0, 0, 1, 1}));
  EXPECT_EQ(bucketize(std::vector<double>{3, -1, 7}, 1), (std::vector<std::size_t>{0, 0, 0}));
  EXPECT_EQ(bucketize(std::vector<double>{5, 1, 3, 2, 4}, 5), (std::vector<std::size_t>{4, 0, 2, 1, 3}));
  EXPECT_EQ(bucketize(std::vector<double>{1, 2, 3, 4, 5}, 2), (std::vector<std::size_t>{0, 0, 0, 1, 1}));
  EXPECT_THROW(bucketize(std::vector<double>{1}, 0), Error);
}

TEST(Bucketize, MonotoneBalancedAndTieStable) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 60), m = 1 + uniform_index(rng, 12);
    std::vector<double> s(n);
    std::vector<std::string> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(uniform_index(rng, 10));
      ids[i] = "id" + std::to_string(uniform_index(rng, 100000));
    }
    const auto rows = bucketize(s, ids, m);
    std::vector<std::size_t> sizes(m, 0);
    for (auto r : rows) ++sizes[r];
    const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    EXPECT_LE(*hi - *lo, 1u);
    for (std::size_t i = 0; i + 1 < m; ++i) EXPECT_GE(sizes[i], sizes[i + 1]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (s[i] < s[j] || (s[i] == s[j] && ids[i] < ids[j])) {
          EXPECT_LE(rows[i], rows[j]);
        }

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    shuffle(perm, rng);
    std::vector<double> ps(n);
    std::vector<std::string> pids(n);
    for (std::size_t i = 0; i < n; ++i) {
      ps[i] = s[perm[i]];
      pids[i] = ids[perm[i]];
    }
    const auto prow = bucketize(ps, pids, m);
    for (std::size_t i = 0; i < n; ++i)
      if (std::count(ids.begin(), ids.end(), ids[perm[i]]) == 1) {
        EXPECT_EQ(prow[i], rows[perm[i]]);
      }
  }
}

TEST(Grid, IntensityAndEmptyColumns) {
  std::vector<Document> docs;
  std::map<std::string, std::size_t> rows;
  for (int i = 0; i < 10; ++i) {
    docs.push_back(doc("a" + std::to_string(i), 0, "alpha beta"));
    rows[docs.back().id] = i < 4 ? 1 : 0;
  }
  docs.push_back(doc("z", 2, "alpha"));
  rows["z"] = 2;
  const auto c = Corpus::from_documents(docs);
  const auto g = grid_with_rows(c, rows, 3);
  EXPECT_EQ(g.days, 3u);
  EXPECT_DOUBLE_EQ(g.cell(1, 0).intensity, 0.4);
  EXPECT_EQ(g.cell(1, 0).count, 4u);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(g.cell(r, 1).intensity, 0.0);
  EXPECT_EQ(g.cell(2, 2).intensity, 1.0);
  std::size_t total = 0;
  for (const auto& cell : g.cells) {
    total += cell.count;
    EXPECT_EQ(cell.count, cell.doc_ids.size());
  }
  EXPECT_EQ(total, c.size());
}

TEST(Grid, NormalizationOverRandomCorpora) {
  Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    SyntheticSpec spec;
    spec.num_events = 1 + static_cast<int>(uniform_index(rng, 5));
    spec.docs_min = 1;
    spec.docs_max = 8;
    spec.days = 1 + static_cast<int>(uniform_index(rng, 20));
    spec.duration_min = 1;
    spec.duration_max = spec.days;
    spec.vocab_size = 300;
    spec.seed = rng();
    const auto sc = generate_corpus(spec);
    if (sc.corpus.size() < 2) continue;
    RandomProjectionEmbedder e(sc.corpus, 16, rng());
    const auto m = init_model({16, 4, 8}, sc.corpus.axis().num_days, rng(), e.id());
    HeatmapGrid g;
    try {
      g = build_heatmap(sc.corpus, e, m, 1 + uniform_index(rng, 10));
    } catch (const Error&) {
      continue;  // all representations identical or degenerate
    }
    std::size_t total = 0;
    for (std::size_t d = 0; d < g.days; ++d) {
      double col = 0;
      std::size_t cnt = 0;
      for (std::size_t r = 0; r < g.rows; ++r) {
        col += g.cell(r, d).intensity;
        cnt += g.cell(r, d).count;
      }
      if (cnt > 0) EXPECT_NEAR(col, 1.0, 1e-9);
      else EXPECT_EQ(col, 0.0);
      total += cnt;
    }
    EXPECT_EQ(total, sc.corpus.size());
  }
}

TEST(Grid, PureFunctionOfInputs) {
  SyntheticSpec spec;
  spec.num_events = 4;
  spec.days = 10;
  spec.vocab_size = 400;
  const auto sc = generate_corpus(spec);
  RandomProjectionEmbedder e(sc.corpus, 16, 2);
  const auto m = init_model({16, 4, 8}, sc.corpus.axis().num_days, 1, e.id());
  EXPECT_EQ(to_json(build_heatmap(sc.corpus, e, m, 6)).dump(), to_json(build_heatmap(sc.corpus, e, m, 6)).dump());
  const auto g = build_heatmap(sc.corpus, e, m, 6);
  EXPECT_EQ(g.rows, 6u);
  EXPECT_EQ(g.days, static_cast<std::size_t>(sc.corpus.axis().num_days));
}

TEST(Labels, HandComputedLogOdds) {
  // row 0: "storm storm rain", "storm rain"; row 1: "vote rain", "vote vote"
  const auto c = Corpus::from_documents({doc("a", 0, "storm storm rain"), doc("b", 0, "storm rain"),
                                         doc("c", 1, "vote rain"), doc("d", 1, "vote vote")});
  auto g = grid_with_rows(c, {{"a", 0}, {"b", 0}, {"c", 1}, {"d", 1}}, 2);
  label_rows(g, c, 3);
  const double b = 0.01, V = 3;  // rain, storm, vote
  auto lo = [&](double cr, double tr, double cx, double tx) {
    return std::log((cr + b) / (tr + b * V)) - std::log((cx + b) / (tx + b * V));
  };
  ASSERT_EQ(g.row_labels[0].size(), 3u);
  EXPECT_EQ(g.row_labels[0][0].first, "storm");
  EXPECT_DOUBLE_EQ(g.row_labels[0][0].second, lo(3, 5, 0, 4));
  EXPECT_EQ(g.row_labels[0][1].first, "rain");
  EXPECT_DOUBLE_EQ(g.row_labels[0][1].second, lo(2, 5, 1, 4));
  EXPECT_EQ(g.row_labels[1][0].first, "vote");
  EXPECT_DOUBLE_EQ(g.row_labels[1][0].second, lo(3, 4, 0, 5));
}

TEST(Labels, UniformWordScoresNearZeroAndEmptyRow) {
  const auto c = Corpus::from_documents({doc("a", 0, "common alpha gamma"), doc("b", 0, "common beta delta"),
                                         doc("c", 0, "common alpha gamma"), doc("d", 0, "common beta delta")});
  auto g = grid_with_rows(c, {{"a", 0}, {"b", 1}, {"c", 0}, {"d", 1}}, 3);
  label_rows(g, c, 2);
  for (std::size_t r = 0; r < 2; ++r) {
    ASSERT_EQ(g.row_labels[r].size(), 2u);
    for (const auto& [w, s] : g.row_labels[r]) EXPECT_NE(w, "common");
  }
  EXPECT_EQ(g.row_labels[0][0].first, "alpha");
  EXPECT_EQ(g.row_labels[0][1].first, "gamma");
  label_rows(g, c, 3);
  EXPECT_EQ(g.row_labels[0][2].first, "common");
  EXPECT_NEAR(g.row_labels[0][2].second, 0.0, 1e-12);
  EXPECT_TRUE(g.row_labels[2].empty());
}

TEST(Sampling, Cells) {
  Cell cell{5, 0.5, {"a", "b", "c", "d", "e"}};
  EXPECT_EQ(sample_cell(cell, 9, 1), cell.doc_ids);
  EXPECT_TRUE(sample_cell(cell, 0, 1).empty());
  const auto s = sample_cell(cell, 3, 42);
  EXPECT_EQ(s, sample_cell(cell, 3, 42));
  EXPECT_EQ(std::set<std::string>(s.begin(), s.end()).size(), 3u);
}

TEST(Sampling, RegionPairs) {
  const auto c = Corpus::from_documents({doc("a", 0, "x"), doc("b", 0, "y"), doc("c", 1, "z"), doc("d", 1, "w")});
  const auto g = grid_with_rows(c, {{"a", 0}, {"b", 0}, {"c", 0}, {"d", 1}}, 2);
  const Region two{0, 0, 0, 0};
  EXPECT_EQ(std::get<PairKey>(sample_region_pair(two, g, {}, 1)), PairKey::of("a", "b"));
  EXPECT_TRUE(std::holds_alternative<RegionExhausted>(sample_region_pair(two, g, {PairKey::of("a", "b")}, 1)));
  EXPECT_THROW(sample_region_pair(Region{1, 1, 1, 1}, g, {}, 1), Error);
  EXPECT_THROW(sample_region_pair(Region{0, 2, 0, 0}, g, {}, 1), Error);

  const Region all{0, 1, 0, 1};
  std::map<PairKey, int> freq;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++freq[std::get<PairKey>(sample_region_pair(all, g, {}, splitmix64(i)))];
  ASSERT_EQ(freq.size(), 6u);
  double chi2 = 0;
  for (const auto& [p, n] : freq) {
    EXPECT_NEAR(n / double(draws), 1.0 / 6, 0.02);
    chi2 += (n - draws / 6.0) * (n - draws / 6.0) / (draws / 6.0);
  }
  EXPECT_LT(chi2, 20.5);  // 5 dof, p = 0.001

  const std::set<PairKey> asked{PairKey::of("a", "b"), PairKey::of("c", "d")};
  for (int i = 0; i < 200; ++i) {
    const auto p = std::get<PairKey>(sample_region_pair(all, g, asked, splitmix64(i)));
    EXPECT_FALSE(asked.contains(p));
  }
}

TEST(Export, RoundTrip) {
  const auto c = Corpus::from_documents({doc("a", 0, "storm rain"), doc("b", 2, "storm vote"), doc("c", 2, "vote")});
  auto g = grid_with_rows(c, {{"a", 0}, {"b", 1}, {"c", 1}}, 2);
  label_rows(g, c, 2);
  g.model_version = 4;
  const auto j = to_json(g);
  EXPECT_EQ(j["row_origin"], "bottom");
  EXPECT_EQ(j["counts"][1][2], 2);
  const auto back = grid_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.row_of("c"), 1u);
  EXPECT_THROW(grid_from_json(nlohmann::json{{"rows", 1}}), Error);
}
