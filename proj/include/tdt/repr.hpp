#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <memory>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "tdt/common.hpp"
#include "tdt/ingest.hpp"

namespace tdt {

struct ModelDims {
  std::size_t text_dim = 64;   // d
  std::size_t time_dim = 8;    // k
  std::size_t event_dim = 32;  // m
};

/// Time2Vec parameters: index 0 is the linear component, 1..k-1 sinusoidal.
struct TimeEmbedParams {
  DenseVector omega;
  DenseVector phi;
  bool operator==(const TimeEmbedParams&) const = default;
};

/// Single-head self-attention over the (text token, time token) sequence.
struct FusionParams {
  Matrix wq;    // d x d
  Matrix wk;    // d x d
  Matrix wv;    // d x d
  Matrix lift;  // k x d, maps the time embedding into text space
  bool operator==(const FusionParams&) const = default;
};

struct MetricHead {
  Matrix a;  // d x m
  bool operator==(const MetricHead&) const = default;
};

struct EventModelParams {
  TimeEmbedParams time;
  FusionParams fusion;
  MetricHead head;
  std::uint64_t version = 0;
  std::string provider_id;

  ModelDims dims() const { return {head.a.rows, time.omega.size(), head.a.cols}; }
  bool operator==(const EventModelParams&) const = default;
};

/// Visits every trained parameter array as (name, mutable span). The order is
/// fixed and shared by snapshots, optimizers and gradient checks.
template <typename Params, typename F>
void for_each_parameter(Params& p, F&& f) {
  f("time.omega", std::span(p.time.omega));
  f("time.phi", std::span(p.time.phi));
  f("fusion.wq", std::span(p.fusion.wq.data));
  f("fusion.wk", std::span(p.fusion.wk.data));
  f("fusion.wv", std::span(p.fusion.wv.data));
  f("fusion.lift", std::span(p.fusion.lift.data));
  f("head.a", std::span(p.head.a.data));
}

/// Same shapes as `p`, all zeros. Used as a gradient accumulator.
inline EventModelParams zeros_like(const EventModelParams& p) {
  EventModelParams z = p;
  for_each_parameter(z, [](const char*, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
  return z;
}

inline bool is_finite(const EventModelParams& p) {
  bool ok = true;
  for_each_parameter(p, [&](const char*, std::span<const double> s) { ok = ok && all_finite(s); });
  return ok;
}

/// Seeded initialization: attention and head weights uniform in
/// (-1/sqrt(d), 1/sqrt(d)); sinusoid frequencies log-spaced over periods from 2
/// days to 2*num_days days, expressed in the scaled time unit day/num_days;
/// phases zero.
inline EventModelParams init_model(const ModelDims& dims, std::int64_t num_days, std::uint64_t seed,
                                   std::string provider_id = {}) {
  if (dims.time_dim < 2) throw Error("init_model: time embedding needs k >= 2");
  if (dims.event_dim < 2 || dims.event_dim > dims.text_dim) throw Error("init_model: need 2 <= m <= d");
  if (num_days < 1) throw Error("init_model: num_days must be >= 1");
  const std::size_t d = dims.text_dim, k = dims.time_dim, m = dims.event_dim;
  EventModelParams p;
  p.provider_id = std::move(provider_id);
  p.time.omega.assign(k, 0.0);
  p.time.phi.assign(k, 0.0);
  p.time.omega[0] = 1.0;
  const double days = static_cast<double>(num_days);
  const double lo = std::log(2.0), hi = std::log(2.0 * days);
  for (std::size_t i = 1; i < k; ++i) {
    const double frac = k == 2 ? 0.0 : static_cast<double>(i - 1) / static_cast<double>(k - 2);
    const double period_days = std::exp(lo + frac * (hi - lo));
    p.time.omega[i] = 2.0 * std::numbers::pi * days / period_days;
  }
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  auto fill = [&](Matrix& mat, std::size_t r, std::size_t c) {
    mat = Matrix(r, c);
    for (auto& v : mat.data) v = uniform(rng, -bound, bound);
  };
  fill(p.fusion.wq, d, d);
  fill(p.fusion.wk, d, d);
  fill(p.fusion.wv, d, d);
  fill(p.fusion.lift, k, d);
  fill(p.head.a, d, m);
  return p;
}

inline DenseVector time_embed(double t, const TimeEmbedParams& params) {
  const std::size_t k = params.omega.size();
  DenseVector out(k);
  if (k == 0) return out;
  out[0] = params.omega[0] * t + params.phi[0];
  for (std::size_t i = 1; i < k; ++i) out[i] = std::sin(params.omega[i] * t + params.phi[i]);
  return out;
}

/// Intermediate values of one fusion forward pass, kept for backprop.
struct FusionTrace {
  DenseVector text;     // x, token 0
  DenseVector lifted;   // u = time_vec * lift, token 1
  DenseVector query;    // x * Wq
  DenseVector key[2];   // X_j * Wk
  DenseVector value[2]; // X_j * Wv
  double weight[2] = {0.0, 0.0};
  DenseVector out;      // w0 v0 + w1 v1 + x
};

inline FusionTrace fuse_trace(std::span<const double> text_vec, std::span<const double> time_vec,
                              const FusionParams& params) {
  const std::size_t d = text_vec.size();
  if (params.wq.rows != d || params.wq.cols != d || params.wk.rows != d || params.wk.cols != d ||
      params.wv.rows != d || params.wv.cols != d)
    throw Error("fuse: attention matrices must be " + std::to_string(d) + "x" + std::to_string(d));
  if (params.lift.rows != time_vec.size() || params.lift.cols != d)
    throw Error("fuse: lift matrix must be " + std::to_string(time_vec.size()) + "x" + std::to_string(d));
  FusionTrace tr;
  tr.text.assign(text_vec.begin(), text_vec.end());
  tr.lifted = row_times(time_vec, params.lift);
  tr.query = row_times(tr.text, params.wq);
  tr.key[0] = row_times(tr.text, params.wk);
  tr.key[1] = row_times(tr.lifted, params.wk);
  tr.value[0] = row_times(tr.text, params.wv);
  tr.value[1] = row_times(tr.lifted, params.wv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const double s0 = dot(tr.query, tr.key[0]) * scale;
  const double s1 = dot(tr.query, tr.key[1]) * scale;
  const double mx = std::max(s0, s1);
  const double e0 = std::exp(s0 - mx), e1 = std::exp(s1 - mx);
  tr.weight[0] = e0 / (e0 + e1);
  tr.weight[1] = e1 / (e0 + e1);
  tr.out.resize(d);
  for (std::size_t i = 0; i < d; ++i)
    tr.out[i] = tr.weight[0] * tr.value[0][i] + tr.weight[1] * tr.value[1][i] + tr.text[i];
  return tr;
}

/// Text-token row of single-head self-attention over [text; lifted time], plus
/// a residual connection to the text vector.
inline DenseVector fuse(std::span<const double> text_vec, std::span<const double> time_vec, const FusionParams& params) {
  return fuse_trace(text_vec, time_vec, params).out;
}

struct Embedding {
  DenseVector vec;
  bool degenerate = false;
};

class EmbedError : public Error {
 public:
  EmbedError(std::string doc_id, const std::string& what)
      : Error("base embedding failed for document '" + doc_id + "': " + what), doc_id_(std::move(doc_id)) {}
  const std::string& doc_id() const { return doc_id_; }

 private:
  std::string doc_id_;
};

/// Pluggable frozen text encoder.
class BaseEmbedder {
 public:
  virtual ~BaseEmbedder() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dim() const = 0;
  virtual Embedding embed(const Document& doc) const = 0;
};

/// Default provider: TF-IDF over the corpus vocabulary, multiplied by a seeded
/// uniform(-1, 1) projection matrix (|V| x d), then L2-normalized.
class RandomProjectionEmbedder final : public BaseEmbedder {
 public:
  RandomProjectionEmbedder(const Vocabulary& vocab, std::size_t corpus_size, std::size_t dim, std::uint64_t seed)
      : vocab_(vocab), corpus_size_(corpus_size), seed_(seed), projection_(vocab.size(), dim) {
    Rng rng(seed);
    for (auto& v : projection_.data) v = uniform(rng, -1.0, 1.0);
  }

  RandomProjectionEmbedder(const Corpus& corpus, std::size_t dim, std::uint64_t seed)
      : RandomProjectionEmbedder(corpus.vocabulary(), corpus.size(), dim, seed) {}

  std::string id() const override {
    return "random-projection-tfidf/d=" + std::to_string(projection_.cols) + "/seed=" + std::to_string(seed_);
  }
  std::size_t dim() const override { return projection_.cols; }
  const Matrix& projection() const { return projection_; }

  Embedding embed(const Document& doc) const override {
    const SparseVector sv = featurize_sparse(doc, vocab_, corpus_size_);
    Embedding e;
    e.vec.assign(projection_.cols, 0.0);
    for (const auto& [index, weight] : sv) {
      if (index >= projection_.rows) throw EmbedError(doc.id, "term index out of projection range");
      const auto row = projection_.row(index);
      for (std::size_t j = 0; j < row.size(); ++j) e.vec[j] += weight * row[j];
    }
    const double n = norm(e.vec);
    if (n == 0.0 || !std::isfinite(n)) {
      std::fill(e.vec.begin(), e.vec.end(), 0.0);
      e.degenerate = true;
    } else {
      for (auto& v : e.vec) v /= n;
    }
    return e;
  }

 private:
  Vocabulary vocab_;
  std::size_t corpus_size_;
  std::uint64_t seed_;
  Matrix projection_;
};

/// Frozen per-document inputs: base embedding plus scaled time (day / D).
struct DocInput {
  DenseVector base;
  bool degenerate = false;
  double time = 0.0;
};

inline double scaled_time(std::int64_t column, const TimeAxis& axis) {
  return static_cast<double>(column) / static_cast<double>(axis.num_days);
}

inline DocInput make_input(const Document& doc, const BaseEmbedder& embedder, const TimeAxis& axis) {
  Embedding e;
  try {
    e = embedder.embed(doc);
  } catch (const EmbedError&) {
    throw;
  } catch (const std::exception& ex) {
    throw EmbedError(doc.id, ex.what());
  }
  if (e.vec.size() != embedder.dim()) throw EmbedError(doc.id, "provider returned wrong dimension");
  return DocInput{std::move(e.vec), e.degenerate, scaled_time(day_index(doc.timestamp, axis), axis)};
}

inline std::vector<DocInput> prepare_inputs(const Corpus& corpus, const BaseEmbedder& embedder) {
  std::vector<DocInput> out;
  out.reserve(corpus.size());
  for (const auto& d : corpus.documents()) out.push_back(make_input(d, embedder, corpus.axis()));
  return out;
}

/// Unit-norm event-space vector, or a zero vector flagged degenerate.
struct Representation {
  DenseVector vec;
  bool degenerate = false;
};

/// Full forward pass with the intermediates needed for backprop.
struct ReprTrace {
  DenseVector time_vec;
  FusionTrace fusion;
  DenseVector head_out;  // y = z * A
  double head_norm = 0.0;
  Representation repr;
};

inline constexpr double kDegenerateNorm = 1e-12;

inline ReprTrace event_repr_trace(const DocInput& in, const EventModelParams& model) {
  ReprTrace tr;
  tr.time_vec = time_embed(in.time, model.time);
  tr.fusion = fuse_trace(in.base, tr.time_vec, model.fusion);
  if (model.head.a.rows != tr.fusion.out.size()) throw Error("event_repr: metric head row count mismatch");
  tr.head_out = row_times(tr.fusion.out, model.head.a);
  tr.head_norm = norm(tr.head_out);
  tr.repr.vec.assign(tr.head_out.size(), 0.0);
  if (in.degenerate || !(tr.head_norm > kDegenerateNorm) || !std::isfinite(tr.head_norm)) {
    tr.repr.degenerate = true;
    return tr;
  }
  for (std::size_t j = 0; j < tr.head_out.size(); ++j) tr.repr.vec[j] = tr.head_out[j] / tr.head_norm;
  return tr;
}

/// L2-normalized A^T * fuse(base, time_embed(day/D)). Documents with a
/// degenerate base embedding carry no text and stay degenerate.
inline Representation event_repr(const DocInput& in, const EventModelParams& model) {
  return event_repr_trace(in, model).repr;
}

inline Representation event_repr(const Document& doc, const EventModelParams& model, const BaseEmbedder& embedder,
                                 const TimeAxis& axis) {
  return event_repr(make_input(doc, embedder, axis), model);
}

inline std::vector<Representation> represent_all(const std::vector<DocInput>& inputs, const EventModelParams& model) {
  std::vector<Representation> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) out.push_back(event_repr(in, model));
  return out;
}

// ---------------------------------------------------------------------------
// Snapshot file: little-endian binary.
//   "TDTMODEL" | u32 format | u64 version | u32 len + provider id bytes |
//   u64 d | u64 k | u64 m | parameter arrays in for_each_parameter order.

namespace detail {

template <typename T>
void write_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw Error("snapshot: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline constexpr char kSnapshotMagic[8] = {'T', 'D', 'T', 'M', 'O', 'D', 'E', 'L'};
inline constexpr std::uint32_t kSnapshotFormat = 1;

inline void save_snapshot(const EventModelParams& model, std::ostream& out) {
  out.write(kSnapshotMagic, sizeof(kSnapshotMagic));
  detail::write_le<std::uint32_t>(out, kSnapshotFormat);
  detail::write_le<std::uint64_t>(out, model.version);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.provider_id.size()));
  out.write(model.provider_id.data(), static_cast<std::streamsize>(model.provider_id.size()));
  const ModelDims dims = model.dims();
  detail::write_le<std::uint64_t>(out, dims.text_dim);
  detail::write_le<std::uint64_t>(out, dims.time_dim);
  detail::write_le<std::uint64_t>(out, dims.event_dim);
  for_each_parameter(model, [&](const char*, std::span<const double> s) {
    for (double v : s) detail::write_le<double>(out, v);
  });
  if (!out) throw Error("snapshot: write failed");
}

inline EventModelParams load_snapshot(std::istream& in) {
  char magic[sizeof(kSnapshotMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kSnapshotMagic, sizeof(magic)) != 0)
    throw Error("snapshot: bad magic");
  if (detail::read_le<std::uint32_t>(in) != kSnapshotFormat) throw Error("snapshot: unsupported format");
  EventModelParams p;
  p.version = detail::read_le<std::uint64_t>(in);
  const auto len = detail::read_le<std::uint32_t>(in);
  p.provider_id.resize(len);
  if (!in.read(p.provider_id.data(), len)) throw Error("snapshot: truncated provider id");
  const auto d = detail::read_le<std::uint64_t>(in);
  const auto k = detail::read_le<std::uint64_t>(in);
  const auto m = detail::read_le<std::uint64_t>(in);
  if (d == 0 || k < 2 || m < 2 || m > d || d > (1u << 16) || k > (1u << 16)) throw Error("snapshot: bad dimensions");
  p.time.omega.assign(k, 0.0);
  p.time.phi.assign(k, 0.0);
  p.fusion.wq = Matrix(d, d);
  p.fusion.wk = Matrix(d, d);
  p.fusion.wv = Matrix(d, d);
  p.fusion.lift = Matrix(k, d);
  p.head.a = Matrix(d, m);
  for_each_parameter(p, [&](const char*, std::span<double> s) {
    for (double& v : s) v = detail::read_le<double>(in);
  });
  return p;
}

inline void save_snapshot_file(const EventModelParams& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("snapshot: cannot open '" + path + "' for writing");
  save_snapshot(model, out);
}

inline EventModelParams load_snapshot_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("snapshot: cannot open '" + path + "'");
  return load_snapshot(in);
}

}  // namespace tdt
