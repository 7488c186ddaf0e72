#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "tdt/ingest.hpp"

using namespace tdt;

namespace {

Document doc(std::string id, std::int64_t ts, std::string text) {
  Document d;
  d.id = std::move(id);
  d.timestamp = ts;
  d.text = std::move(text);
  return d;
}

Corpus parse(const std::string& s) {
  std::istringstream in(s);
  return parse_corpus(in);
}

}  // namespace

TEST(Tokenize, StripsPunctuationAndLowercases) {
  EXPECT_EQ(tokenize("NATO involvement, Kosovo!"), (std::vector<std::string>{"nato", "involvement", "kosovo"}));
  EXPECT_EQ(tokenize("Johnson and Johnson"), (std::vector<std::string>{"johnson", "and", "johnson"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_TRUE(tokenize("  ,;!  ").empty());
}

TEST(Tokenize, UnicodeAware) {
  EXPECT_EQ(tokenize("café «Zürich»"), (std::vector<std::string>{"café", "zürich"}));
  EXPECT_EQ(tokenize("a\u2014b"), (std::vector<std::string>{"ab"}));
}

TEST(Tokenize, Idempotent) {
  for (const char* s : {"NATO involvement, Kosovo!", "Hello  World -- again.", "x-ray 3.5% e.g."}) {
    const auto once = tokenize(s);
    std::string joined;
    for (const auto& t : once) joined += t + " ";
    EXPECT_EQ(tokenize(joined), once) << s;
  }
}

TEST(Featurize, IdfFormula) {
  Vocabulary v;
  v.add("rare", 1);
  v.add("common", 10);
  Document d = doc("x", 0, "");
  d.tokens = {"rare", "rare", "common", "unknown"};
  const auto sv = featurize_sparse(d, v, 10);
  ASSERT_EQ(sv.size(), 2u);
  EXPECT_EQ(sv[0].index, 0u);
  EXPECT_DOUBLE_EQ(sv[0].weight, 2.0 * std::log(11.0 / 2.0));
  EXPECT_EQ(sv[1].index, 1u);
  EXPECT_EQ(sv[1].weight, 0.0);
}

TEST(Featurize, EmptyAndLinear) {
  Vocabulary v;
  v.add("a", 1);
  v.add("b", 2);
  Document d = doc("x", 0, "");
  d.tokens = {"zzz"};
  EXPECT_TRUE(featurize_sparse(d, v, 5).empty());
  d.tokens = {"a", "b"};
  const auto one = featurize_sparse(d, v, 5);
  d.tokens = {"a", "b", "a", "b", "a", "b"};
  const auto three = featurize_sparse(d, v, 5);
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_DOUBLE_EQ(three[i].weight, 3.0 * one[i].weight);
}

TEST(Vocabulary, MinDfAndOrdering) {
  std::vector<Document> docs{doc("1", 0, ""), doc("2", 0, ""), doc("3", 0, "")};
  docs[0].tokens = {"beta", "alpha", "solo"};
  docs[1].tokens = {"alpha", "beta"};
  docs[2].tokens = {"alpha"};
  const auto v = Vocabulary::build(docs, 2);
  EXPECT_EQ(v.terms(), (std::vector<std::string>{"alpha", "beta"}));
  EXPECT_EQ(v.find("alpha")->document_frequency, 3u);
  EXPECT_FALSE(v.find("solo"));
}

TEST(DayIndex, FloorArithmetic) {
  const TimeAxis axis{18000, 10};
  EXPECT_EQ(day_index(18000 * kSecondsPerDay, axis), 0);
  EXPECT_EQ(day_index((18000 + 3) * kSecondsPerDay + 5, axis), 3);
  EXPECT_THROW(day_index(18000 * kSecondsPerDay - 1, axis), Error);
  EXPECT_THROW(day_index((18000 + 10) * kSecondsPerDay, axis), Error);
}

TEST(Rfc3339, Parses) {
  EXPECT_EQ(parse_rfc3339("1970-01-02T00:00:00Z"), 86400);
  EXPECT_EQ(parse_rfc3339("2021-01-01T01:00:00+01:00"), 1609459200);
  EXPECT_EQ(parse_rfc3339("2021-01-01T00:00:00.750Z"), 1609459200);
  EXPECT_FALSE(parse_rfc3339("2021-13-01T00:00:00Z"));
  EXPECT_FALSE(parse_rfc3339("yesterday"));
}

TEST(Ingest, TimeAxisAndOrdering) {
  const auto c = parse(
      R"({"id":"c","timestamp":259200,"text":"gamma ray"})"
      "\n"
      R"({"id":"a","timestamp":0,"text":"alpha ray"})"
      "\n\n"
      R"({"id":"b","timestamp":"1970-01-02T12:00:00Z","text":"beta ray","source":"wire"})"
      "\n");
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c.axis().num_days, 4);
  EXPECT_EQ(c.doc(0).id, "a");
  EXPECT_EQ(c.doc(1).id, "b");
  EXPECT_EQ(c.doc(1).source, "wire");
  EXPECT_EQ(c.column(2), 3);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_GE(c.column(i), 0);
    EXPECT_LT(c.column(i), c.axis().num_days);
  }
}

TEST(Ingest, ErrorsNameTheLine) {
  try {
    parse(R"({"id":"a","timestamp":0,"text":"x"})"
          "\n"
          R"({"id":"b","text":"y"})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  try {
    parse(R"({"id":"a","timestamp":0,"text":"x"})"
          "\n"
          R"({"id":"a","timestamp":5,"text":"y"})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("'a'"), std::string::npos);
  }
  EXPECT_THROW(parse(""), Error);
  EXPECT_THROW(parse("\n\n"), Error);
  EXPECT_THROW(parse("{not json"), Error);
}

TEST(Ingest, ReingestIsStable) {
  const std::string src =
      R"({"id":"a","timestamp":10,"text":"storm hits coast"})"
      "\n"
      R"({"id":"b","timestamp":90000,"text":"storm damage on coast"})"
      "\n"
      R"({"id":"c","timestamp":90001,"text":"election results"})"
      "\n";
  const auto c1 = parse(src);
  const auto c2 = parse(corpus_to_jsonl(c1));
  ASSERT_EQ(c1.size(), c2.size());
  EXPECT_EQ(c1.vocabulary().terms(), c2.vocabulary().terms());
  for (std::size_t i = 0; i < c1.size(); ++i) {
    EXPECT_EQ(c1.doc(i).tokens, c2.doc(i).tokens);
    EXPECT_EQ(c1.features(i), c2.features(i));
  }
}
