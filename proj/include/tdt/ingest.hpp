#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdt/common.hpp"

namespace tdt {

inline constexpr std::int64_t kSecondsPerDay = 86400;
inline constexpr std::size_t kDefaultMinDocumentFrequency = 2;

struct Document {
  std::string id;
  std::int64_t timestamp = 0;
  std::string text;
  std::vector<std::string> tokens;
  std::optional<std::string> source;
};

namespace detail {

// Decodes one UTF-8 code point starting at i; returns its byte length (1 on
// malformed input so the caller always advances).
inline std::size_t utf8_decode(std::string_view s, std::size_t i, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    cp = b0;
    return 1;
  }
  if ((b0 & 0xE0) == 0xC0) {
    int c1 = cont(1);
    if (c1 >= 0) {
      cp = (char32_t(b0 & 0x1F) << 6) | char32_t(c1);
      return 2;
    }
  } else if ((b0 & 0xF0) == 0xE0) {
    int c1 = cont(1), c2 = cont(2);
    if (c1 >= 0 && c2 >= 0) {
      cp = (char32_t(b0 & 0x0F) << 12) | (char32_t(c1) << 6) | char32_t(c2);
      return 3;
    }
  } else if ((b0 & 0xF8) == 0xF0) {
    int c1 = cont(1), c2 = cont(2), c3 = cont(3);
    if (c1 >= 0 && c2 >= 0 && c3 >= 0) {
      cp = (char32_t(b0 & 0x07) << 18) | (char32_t(c1) << 12) | (char32_t(c2) << 6) | char32_t(c3);
      return 4;
    }
  }
  cp = 0xFFFD;
  return 1;
}

inline bool is_unicode_space(char32_t cp) {
  return cp == 0x00A0 || cp == 0x1680 || (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 || cp == 0x2029 ||
         cp == 0x202F || cp == 0x205F || cp == 0x3000;
}

// General punctuation block, Latin-1 punctuation, CJK punctuation.
inline bool is_unicode_punct(char32_t cp) {
  return (cp >= 0x00A1 && cp <= 0x00BF && cp != 0x00AA && cp != 0x00B5 && cp != 0x00BA) || cp == 0x00D7 ||
         cp == 0x00F7 || (cp >= 0x2010 && cp <= 0x2027) || (cp >= 0x2030 && cp <= 0x205E) ||
         (cp >= 0x3001 && cp <= 0x3003) || (cp >= 0x3008 && cp <= 0x3011) || cp == 0xFFFD;
}

}  // namespace detail

/// Lowercases ASCII letters, drops punctuation (ASCII and common Unicode
/// punctuation) and splits on whitespace. Other code points are kept verbatim,
/// so non-Latin scripts survive as tokens.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  };
  for (std::size_t i = 0; i < text.size();) {
    char32_t cp;
    const std::size_t len = detail::utf8_decode(text, i, cp);
    if (cp < 0x80) {
      const char c = static_cast<char>(cp);
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
        flush();
      } else if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
        cur.push_back(c);
      } else if (c >= 'A' && c <= 'Z') {
        cur.push_back(static_cast<char>(c - 'A' + 'a'));
      }
      // remaining ASCII is punctuation or control: stripped
    } else if (detail::is_unicode_space(cp)) {
      flush();
    } else if (!detail::is_unicode_punct(cp)) {
      cur.append(text.substr(i, len));
    }
    i += len;
  }
  flush();
  return tokens;
}

class Vocabulary {
 public:
  struct Entry {
    std::size_t index = 0;
    std::size_t document_frequency = 0;
  };

  Vocabulary() = default;

  /// Terms with document frequency below `min_df` are excluded. Indices follow
  /// lexicographic term order.
  static Vocabulary build(const std::vector<Document>& docs, std::size_t min_df = kDefaultMinDocumentFrequency) {
    std::map<std::string, std::size_t> df;
    for (const auto& d : docs) {
      std::unordered_set<std::string_view> seen(d.tokens.begin(), d.tokens.end());
      for (auto t : seen) ++df[std::string(t)];
    }
    Vocabulary v;
    for (const auto& [term, count] : df)
      if (count >= min_df) v.add(term, count);
    return v;
  }

  /// Appends a term at the next dense index.
  void add(const std::string& term, std::size_t document_frequency) {
    if (document_frequency == 0) throw Error("vocabulary: document frequency must be >= 1 for '" + term + "'");
    if (entries_.contains(term)) throw Error("vocabulary: duplicate term '" + term + "'");
    entries_.emplace(term, Entry{terms_.size(), document_frequency});
    terms_.push_back(term);
  }

  std::optional<Entry> find(std::string_view term) const {
    auto it = entries_.find(std::string(term));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const { return terms_.size(); }
  const std::string& term(std::size_t index) const { return terms_.at(index); }
  const std::vector<std::string>& terms() const { return terms_; }

 private:
  std::unordered_map<std::string, Entry> entries_;
  std::vector<std::string> terms_;
};

struct SparseEntry {
  std::size_t index = 0;
  double weight = 0.0;
  bool operator==(const SparseEntry&) const = default;
};

using SparseVector = std::vector<SparseEntry>;

/// TF-IDF with raw term frequency and idf = ln((1+N)/(1+df)), floored at 0.
/// Out-of-vocabulary tokens are ignored; entries are sorted by term index.
inline SparseVector featurize_sparse(const Document& doc, const Vocabulary& vocab, std::size_t corpus_size) {
  std::map<std::size_t, std::size_t> tf;
  for (const auto& tok : doc.tokens)
    if (auto e = vocab.find(tok)) ++tf[e->index];
  SparseVector out;
  out.reserve(tf.size());
  const double n = static_cast<double>(corpus_size);
  for (const auto& [index, count] : tf) {
    const double df = static_cast<double>(vocab.find(vocab.term(index))->document_frequency);
    const double idf = std::max(0.0, std::log((1.0 + n) / (1.0 + df)));
    out.push_back({index, static_cast<double>(count) * idf});
  }
  return out;
}

struct TimeAxis {
  std::int64_t epoch_day0 = 0;
  std::int64_t num_days = 1;
};

inline std::int64_t floor_day(std::int64_t timestamp) {
  std::int64_t q = timestamp / kSecondsPerDay;
  if (timestamp % kSecondsPerDay != 0 && timestamp < 0) --q;
  return q;
}

/// UTC day column of a timestamp; throws when it falls outside the axis.
inline std::int64_t day_index(std::int64_t timestamp, const TimeAxis& axis) {
  const std::int64_t col = floor_day(timestamp) - axis.epoch_day0;
  if (col < 0 || col >= axis.num_days)
    throw Error("day_index: timestamp " + std::to_string(timestamp) + " outside the corpus time axis");
  return col;
}

/// Parses "YYYY-MM-DDTHH:MM:SS[.frac](Z|+HH:MM|-HH:MM)" into epoch seconds
/// (fractional seconds truncated).
inline std::optional<std::int64_t> parse_rfc3339(std::string_view s) {
  auto digits = [&](std::size_t pos, std::size_t n) -> std::optional<int> {
    if (pos + n > s.size()) return std::nullopt;
    int v = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
      if (s[i] < '0' || s[i] > '9') return std::nullopt;
      v = v * 10 + (s[i] - '0');
    }
    return v;
  };
  if (s.size() < 20 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != 't' && s[10] != ' ') ||
      s[13] != ':' || s[16] != ':')
    return std::nullopt;
  auto y = digits(0, 4), mo = digits(5, 2), d = digits(8, 2), h = digits(11, 2), mi = digits(14, 2), se = digits(17, 2);
  if (!y || !mo || !d || !h || !mi || !se) return std::nullopt;
  using namespace std::chrono;
  const year_month_day ymd{year{*y}, month{static_cast<unsigned>(*mo)}, day{static_cast<unsigned>(*d)}};
  if (!ymd.ok() || *h > 23 || *mi > 59 || *se > 60) return std::nullopt;
  std::size_t pos = 19;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    const std::size_t start = pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
    if (pos == start) return std::nullopt;
  }
  if (pos >= s.size()) return std::nullopt;
  std::int64_t offset = 0;
  if (s[pos] == 'Z' || s[pos] == 'z') {
    ++pos;
  } else if (s[pos] == '+' || s[pos] == '-') {
    const int sign = s[pos] == '+' ? 1 : -1;
    auto oh = digits(pos + 1, 2), om = digits(pos + 4, 2);
    if (!oh || !om || pos + 3 >= s.size() || s[pos + 3] != ':') return std::nullopt;
    offset = sign * (std::int64_t{*oh} * 3600 + std::int64_t{*om} * 60);
    pos += 6;
  } else {
    return std::nullopt;
  }
  if (pos != s.size()) return std::nullopt;
  const std::int64_t days = sys_days{ymd}.time_since_epoch().count();
  return days * kSecondsPerDay + std::int64_t{*h} * 3600 + std::int64_t{*mi} * 60 + *se - offset;
}

class Corpus {
 public:
  Corpus() = default;

  /// Sorts by (timestamp, id), rejects duplicate ids, re-derives tokens from
  /// text and builds the vocabulary, sparse features and time axis.
  static Corpus from_documents(std::vector<Document> docs, std::size_t min_df = kDefaultMinDocumentFrequency) {
    if (docs.empty()) throw Error("corpus: no documents");
    Corpus c;
    for (auto& d : docs) d.tokens = tokenize(d.text);
    std::sort(docs.begin(), docs.end(), [](const Document& a, const Document& b) {
      return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.id < b.id;
    });
    for (std::size_t i = 0; i < docs.size(); ++i) {
      if (!c.index_.emplace(docs[i].id, i).second) throw Error("corpus: duplicate document id '" + docs[i].id + "'");
    }
    c.docs_ = std::move(docs);
    c.vocab_ = Vocabulary::build(c.docs_, min_df);
    c.features_.reserve(c.docs_.size());
    for (const auto& d : c.docs_) c.features_.push_back(featurize_sparse(d, c.vocab_, c.docs_.size()));
    const std::int64_t first = floor_day(c.docs_.front().timestamp);
    const std::int64_t last = floor_day(c.docs_.back().timestamp);
    c.axis_ = TimeAxis{first, last - first + 1};
    c.columns_.reserve(c.docs_.size());
    for (const auto& d : c.docs_) c.columns_.push_back(day_index(d.timestamp, c.axis_));
    return c;
  }

  std::size_t size() const { return docs_.size(); }
  const std::vector<Document>& documents() const { return docs_; }
  const Document& doc(std::size_t i) const { return docs_.at(i); }
  const Vocabulary& vocabulary() const { return vocab_; }
  const TimeAxis& axis() const { return axis_; }
  const SparseVector& features(std::size_t i) const { return features_.at(i); }
  std::int64_t column(std::size_t i) const { return columns_.at(i); }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(std::string_view id) const { return find(id).has_value(); }
  std::size_t position(std::string_view id) const {
    if (auto p = find(id)) return *p;
    throw Error("unknown document id '" + std::string(id) + "'");
  }

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> index_;
  Vocabulary vocab_;
  std::vector<SparseVector> features_;
  std::vector<std::int64_t> columns_;
  TimeAxis axis_;
};

/// One JSON object per line: id (string), timestamp (integer epoch seconds or
/// RFC-3339 string), text (string), optional source (string). Blank lines are
/// skipped.
inline Corpus parse_corpus(std::istream& in, std::size_t min_df = kDefaultMinDocumentFrequency) {
  std::vector<Document> docs;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) -> Error {
      return Error("corpus line " + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw fail(std::string("malformed record (") + e.what() + ")");
    }
    if (!rec.is_object()) throw fail("record is not an object");
    if (!rec.contains("id") || !rec["id"].is_string()) throw fail("missing or non-string id");
    if (!rec.contains("timestamp")) throw fail("missing timestamp");
    if (!rec.contains("text") || !rec["text"].is_string()) throw fail("missing or non-string text");
    Document d;
    d.id = rec["id"].get<std::string>();
    const auto& ts = rec["timestamp"];
    if (ts.is_number_integer()) {
      d.timestamp = ts.get<std::int64_t>();
    } else if (ts.is_string()) {
      auto parsed = parse_rfc3339(ts.get<std::string>());
      if (!parsed) throw fail("unparseable timestamp '" + ts.get<std::string>() + "'");
      d.timestamp = *parsed;
    } else {
      throw fail("timestamp must be an integer or an RFC-3339 string");
    }
    d.text = rec["text"].get<std::string>();
    if (rec.contains("source") && !rec["source"].is_null()) {
      if (!rec["source"].is_string()) throw fail("non-string source");
      d.source = rec["source"].get<std::string>();
    }
    if (!ids.insert(d.id).second) throw Error("duplicate document id '" + d.id + "' at line " + std::to_string(line_no));
    docs.push_back(std::move(d));
  }
  if (docs.empty()) throw Error("corpus: empty input");
  return Corpus::from_documents(std::move(docs), min_df);
}

inline Corpus ingest_corpus(const std::string& path, std::size_t min_df = kDefaultMinDocumentFrequency) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus file '" + path + "'");
  return parse_corpus(in, min_df);
}

inline std::string corpus_to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const auto& d : corpus.documents()) {
    nlohmann::json rec{{"id", d.id}, {"timestamp", d.timestamp}, {"text", d.text}};
    if (d.source) rec["source"] = *d.source;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

}  // namespace tdt
