#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdt/events.hpp"
#include "tdt/heatmap.hpp"
#include "tdt/ingest.hpp"
#include "tdt/learn.hpp"
#include "tdt/repr.hpp"

namespace tdt {

struct SessionConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir;  // empty: in-memory only
  std::size_t default_rows = kDefaultRows;
  std::size_t label_words = kDefaultLabelWords;
  double threshold = kDefaultThreshold;
  ModelDims dims;
  TrainConfig train;
  std::uint64_t model_seed = 1;
  std::uint64_t embed_seed = 2;
  std::uint64_t question_seed = 3;
  std::int64_t token_ttl_seconds = 24 * 3600;
};

/// Reads the keys present in `j` on top of `base`.
inline SessionConfig session_config_from_json(SessionConfig base, const nlohmann::json& j) {
  try {
    if (j.contains("host")) base.host = j["host"].get<std::string>();
    if (j.contains("port")) base.port = j["port"].get<int>();
    if (j.contains("data_dir")) base.data_dir = j["data_dir"].get<std::string>();
    if (j.contains("default_rows")) base.default_rows = j["default_rows"].get<std::size_t>();
    if (j.contains("label_words")) base.label_words = j["label_words"].get<std::size_t>();
    if (j.contains("threshold")) base.threshold = j["threshold"].get<double>();
    if (j.contains("text_dim")) base.dims.text_dim = j["text_dim"].get<std::size_t>();
    if (j.contains("time_dim")) base.dims.time_dim = j["time_dim"].get<std::size_t>();
    if (j.contains("event_dim")) base.dims.event_dim = j["event_dim"].get<std::size_t>();
    if (j.contains("model_seed")) base.model_seed = j["model_seed"].get<std::uint64_t>();
    if (j.contains("embed_seed")) base.embed_seed = j["embed_seed"].get<std::uint64_t>();
    if (j.contains("question_seed")) base.question_seed = j["question_seed"].get<std::uint64_t>();
    if (j.contains("token_ttl_seconds")) base.token_ttl_seconds = j["token_ttl_seconds"].get<std::int64_t>();
    if (j.contains("train")) base.train = apply_overrides(base.train, j["train"]);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  if (base.default_rows < 1) throw Error("config: default_rows must be >= 1");
  if (!(base.threshold > -1.0 && base.threshold < 1.0)) throw Error("config: threshold must lie in (-1, 1)");
  return base;
}

/// Environment overrides: TDT_HOST, TDT_PORT, TDT_DATA_DIR, TDT_ROWS, TDT_TAU,
/// TDT_MARGIN, TDT_LEARNING_RATE, TDT_EPOCHS, TDT_BATCH_SIZE, TDT_MINING_MODE,
/// TDT_TRAIN_SEED, TDT_MODEL_SEED, TDT_EMBED_SEED, TDT_QUESTION_SEED.
inline SessionConfig apply_env_overrides(SessionConfig base,
                                         const std::function<const char*(const char*)>& getenv_fn = std::getenv) {
  nlohmann::json j = nlohmann::json::object(), train = nlohmann::json::object();
  auto num = [&](const char* var, nlohmann::json& dst, const char* key, bool integer) {
    if (const char* v = getenv_fn(var)) {
      try {
        if (integer)
          dst[key] = std::stoll(v);
        else
          dst[key] = std::stod(v);
      } catch (const std::exception&) {
        throw Error(std::string("config: environment variable ") + var + " is not a number");
      }
    }
  };
  if (const char* v = getenv_fn("TDT_HOST")) j["host"] = v;
  if (const char* v = getenv_fn("TDT_DATA_DIR")) j["data_dir"] = v;
  if (const char* v = getenv_fn("TDT_MINING_MODE")) train["mining_mode"] = v;
  num("TDT_PORT", j, "port", true);
  num("TDT_ROWS", j, "default_rows", true);
  num("TDT_TAU", j, "threshold", false);
  num("TDT_MODEL_SEED", j, "model_seed", true);
  num("TDT_EMBED_SEED", j, "embed_seed", true);
  num("TDT_QUESTION_SEED", j, "question_seed", true);
  num("TDT_MARGIN", train, "margin", false);
  num("TDT_LEARNING_RATE", train, "learning_rate", false);
  num("TDT_EPOCHS", train, "epochs", true);
  num("TDT_BATCH_SIZE", train, "batch_size", true);
  num("TDT_TRAIN_SEED", train, "seed", true);
  if (!train.empty()) j["train"] = train;
  return session_config_from_json(std::move(base), j);
}

inline SessionConfig load_session_config(const std::string& path, SessionConfig cfg = {}) {
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(std::string("config: ") + e.what());
    }
    cfg = session_config_from_json(cfg, j);
  }
  return apply_env_overrides(cfg);
}

/// Result of one API call: an HTTP-style status code plus a body that always
/// carries an explicit "status" field.
struct Response {
  int code = 200;
  nlohmann::json body;

  bool ok() const { return code == 200; }

  static Response success(nlohmann::json body) {
    body["status"] = "ok";
    return {200, std::move(body)};
  }
  static Response failure(int code, std::string status, std::string message) {
    return {code, {{"status", std::move(status)}, {"error", std::move(message)}}};
  }
};

using Clock = std::function<std::int64_t()>;

inline std::int64_t system_now() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

/// HITL session state behind the wire API. Readers take a shared lock;
/// corpus, judgment and snapshot writes are exclusive. Training runs outside
/// the lock and concurrent retrain requests coalesce onto the in-flight run.
class Session {
 public:
  explicit Session(SessionConfig config = {}, Clock clock = system_now)
      : config_(std::move(config)), clock_(std::move(clock)), question_rng_(config_.question_seed) {}

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const SessionConfig& config() const { return config_; }

  /// Re-creates state from the data directory: corpus file plus a replay of
  /// the judgment log. Returns false when the directory holds no corpus.
  bool restore() {
    if (config_.data_dir.empty()) return false;
    const auto dir = std::filesystem::path(config_.data_dir);
    if (!std::filesystem::exists(dir / kCorpusFile)) return false;
    std::ifstream in(dir / kCorpusFile);
    Corpus corpus = parse_corpus(in);
    std::vector<std::string> lines;
    if (std::ifstream log(dir / kLogFile); log) {
      std::string line;
      while (std::getline(log, line))
        if (!line.empty()) lines.push_back(line);
    }
    std::unique_lock lk(mu_);
    install_corpus(std::move(corpus));
    for (const auto& line : lines) replay_record(nlohmann::json::parse(line));
    return true;
  }

  /// Applies recorded log lines (judgments and retrain markers) in order
  /// against the loaded corpus, without writing them again.
  void replay(const std::vector<std::string>& lines) {
    std::unique_lock lk(mu_);
    if (!corpus_) throw Error("replay: no corpus loaded");
    for (const auto& line : lines)
      if (!line.empty()) replay_record(nlohmann::json::parse(line));
  }

  Response upload_corpus(const std::string& jsonl) {
    Corpus corpus;
    try {
      std::istringstream in(jsonl);
      corpus = parse_corpus(in);
    } catch (const Error& e) {
      return Response::failure(400, "error", e.what());
    }
    std::unique_lock lk(mu_);
    if (!config_.data_dir.empty()) {
      const auto dir = std::filesystem::path(config_.data_dir);
      std::filesystem::create_directories(dir);
      std::ofstream(dir / kCorpusFile, std::ios::trunc) << jsonl;
      std::ofstream(dir / kLogFile, std::ios::trunc);
    }
    install_corpus(std::move(corpus));
    persist_snapshot();
    return Response::success({{"documents", corpus_->size()},
                              {"days", corpus_->axis().num_days},
                              {"vocabulary", corpus_->vocabulary().size()},
                              {"model_version", model_->version}});
  }

  Response heatmap(std::optional<std::size_t> rows = std::nullopt) {
    {
      std::shared_lock lk(mu_);
      if (!corpus_) return no_corpus();
    }
    std::unique_lock lk(mu_);
    const std::size_t m = rows.value_or(config_.default_rows);
    if (m < 1) return Response::failure(400, "error", "rows must be >= 1");
    try {
      const auto& entry = grid_locked(m);
      current_rows_ = m;
      return {200, entry.body};
    } catch (const Error& e) {
      return Response::failure(422, "error", e.what());
    }
  }

  Response cell_sample(std::size_t row, std::size_t day, std::size_t n, std::optional<std::uint64_t> seed = {}) {
    std::unique_lock lk(mu_);
    if (!corpus_) return no_corpus();
    const auto& grid = grid_locked(current_rows_).grid;
    if (row >= grid.rows || day >= grid.days) return Response::failure(400, "error", "cell outside grid bounds");
    const auto ids = sample_cell(grid.cell(row, day), n, seed.value_or(config_.question_seed));
    nlohmann::json docs = nlohmann::json::array();
    for (const auto& id : ids) docs.push_back(render(id));
    return Response::success({{"row", row},
                              {"day", day},
                              {"count", grid.cell(row, day).count},
                              {"model_version", grid.model_version},
                              {"documents", std::move(docs)}});
  }

  Response region_question(const Region& region, std::optional<std::size_t> rows = std::nullopt) {
    std::unique_lock lk(mu_);
    if (!corpus_) return no_corpus();
    const std::size_t m = rows.value_or(current_rows_);
    const auto& grid = grid_locked(m).grid;
    if (!grid.valid(region)) return Response::failure(400, "error", "region outside grid bounds");
    expire_tokens_locked();
    std::set<PairKey> asked = log_.pairs();
    for (const auto& [tok, q] : questions_)
      if (!q.answered && !q.expired) asked.insert(q.pair);
    RegionPairResult picked;
    try {
      picked = sample_region_pair(region, grid, asked, question_rng_());
    } catch (const Error& e) {
      return Response::failure(422, "error", e.what());
    }
    if (std::holds_alternative<RegionExhausted>(picked))
      return {409, {{"status", "exhausted"}, {"error", "no unasked pairs in region"}}};
    const auto pair = std::get<PairKey>(picked);
    const std::string token = make_token();
    questions_[token] = Question{pair, clock_(), false, false};
    return Response::success(
        {{"token", token}, {"documents", {render(pair.first), render(pair.second)}}, {"model_version", model_->version}});
  }

  Response submit_judgment(const std::string& token, const std::string& label, const std::string& annotator) {
    const auto parsed = parse_label(label);
    if (!parsed) return Response::failure(400, "error", "label must be 'same-event' or 'different-event'");
    std::unique_lock lk(mu_);
    if (!corpus_) return no_corpus();
    expire_tokens_locked();
    auto it = questions_.find(token);
    if (it == questions_.end()) return Response::failure(404, "error", "unknown question token");
    if (it->second.answered) return Response::failure(409, "error", "question token already answered");
    if (it->second.expired) return Response::failure(410, "error", "question token expired");
    PairJudgment j{it->second.pair.first, it->second.pair.second, *parsed, annotator, clock_()};
    try {
      record_judgment(j, log_, *corpus_);
    } catch (const Error& e) {
      return Response::failure(400, "error", e.what());
    }
    it->second.answered = true;
    auto rec = to_json(j);
    rec["kind"] = "judgment";
    append_log(rec);
    return Response::success({{"judgments", log_.size()},
                              {"triplets", build_triplets(log_).size()},
                              {"model_version", model_->version}});
  }

  /// Trains on the current judgments and installs the new snapshot. A request
  /// arriving while a run is in flight waits for it and reports its result.
  Response retrain(const nlohmann::json& overrides = nullptr) {
    std::unique_lock tl(train_mu_);
    if (inflight_.valid() && inflight_.wait_for(std::chrono::seconds(0)) != std::future_status::ready) {
      auto pending = inflight_;
      tl.unlock();
      auto r = pending.get();
      if (r.ok()) r.body["coalesced"] = true;
      return r;
    }
    std::promise<Response> promise;
    inflight_ = promise.get_future().share();
    tl.unlock();
    Response r = run_training(overrides);
    ++training_runs_;
    promise.set_value(r);
    return r;
  }

  Response clustering(std::optional<double> threshold = std::nullopt) {
    std::shared_lock lk(mu_);
    if (!corpus_) return no_corpus();
    const double tau = threshold.value_or(config_.threshold);
    if (!(tau > -1.0 && tau < 1.0)) return Response::failure(400, "error", "tau must lie in (-1, 1)");
    auto body = to_json(cluster_corpus(*corpus_, *table_, *model_, tau));
    return Response::success(std::move(body));
  }

  /// BCubed of the current clustering against `gold`, plus row purity of the
  /// current grid.
  Response evaluation(const nlohmann::json& gold_json, std::optional<double> threshold = std::nullopt) {
    Assignment gold;
    try {
      gold = assignment_from_json(gold_json);
    } catch (const Error& e) {
      return Response::failure(400, "error", e.what());
    }
    std::unique_lock lk(mu_);
    if (!corpus_) return no_corpus();
    const double tau = threshold.value_or(config_.threshold);
    try {
      const auto clusters = cluster_corpus(*corpus_, *table_, *model_, tau);
      const auto score = bcubed(clusters.assignment, gold);
      const double purity = row_purity(grid_locked(current_rows_).grid, gold);
      auto body = to_json(score);
      body["row_purity"] = purity;
      body["model_version"] = model_->version;
      body["threshold"] = tau;
      body["num_events"] = clusters.centroids.size();
      return Response::success(std::move(body));
    } catch (const Error& e) {
      return Response::failure(400, "error", e.what());
    }
  }

  /// How many current judgments the present clustering satisfies.
  Response feedback_report(std::optional<double> threshold = std::nullopt) {
    std::shared_lock lk(mu_);
    if (!corpus_) return no_corpus();
    const auto entries = log_.current_entries();
    nlohmann::json body{{"judgments", entries.size()}, {"model_version", model_->version}};
    if (entries.empty()) {
      body["satisfied"] = 0;
      body["fraction"] = nullptr;
      body["fraction_status"] = "not-applicable";
      return Response::success(std::move(body));
    }
    const auto clusters = cluster_corpus(*corpus_, *table_, *model_, threshold.value_or(config_.threshold));
    std::size_t satisfied = 0, same = 0, same_ok = 0;
    for (const auto& e : entries) {
      const auto a = clusters.assignment.at(e.pair.first), b = clusters.assignment.at(e.pair.second);
      const bool together = a == b && a != kUnclustered;
      const bool ok = e.label == Label::SameEvent ? together : !together;
      if (e.label == Label::SameEvent) {
        ++same;
        same_ok += ok;
      }
      satisfied += ok;
    }
    body["satisfied"] = satisfied;
    body["fraction"] = static_cast<double>(satisfied) / static_cast<double>(entries.size());
    body["same_event"] = {{"total", same}, {"satisfied", same_ok}};
    body["different_event"] = {{"total", entries.size() - same}, {"satisfied", satisfied - same_ok}};
    return Response::success(std::move(body));
  }

  Response status() const {
    std::shared_lock lk(mu_);
    if (!corpus_) return Response::success({{"corpus_loaded", false}});
    return Response::success({{"corpus_loaded", true},
                              {"documents", corpus_->size()},
                              {"judgments", log_.size()},
                              {"triplets", build_triplets(log_).size()},
                              {"model_version", model_->version},
                              {"training_runs", training_runs_.load()}});
  }

  // Accessors for in-process drivers and tests.
  std::shared_ptr<const EventModelParams> model() const {
    std::shared_lock lk(mu_);
    return model_;
  }
  std::shared_ptr<const Corpus> corpus() const {
    std::shared_lock lk(mu_);
    return corpus_;
  }
  std::shared_ptr<const InputTable> inputs() const {
    std::shared_lock lk(mu_);
    return table_;
  }
  JudgmentLog judgments() const {
    std::shared_lock lk(mu_);
    return log_;
  }
  std::vector<std::string> log_lines() const {
    std::shared_lock lk(mu_);
    return log_lines_;
  }
  HeatmapGrid grid(std::optional<std::size_t> rows = std::nullopt) {
    std::unique_lock lk(mu_);
    if (!corpus_) throw Error("no corpus loaded");
    return grid_locked(rows.value_or(current_rows_)).grid;
  }
  std::size_t training_runs() const { return training_runs_.load(); }

  static constexpr const char* kCorpusFile = "corpus.jsonl";
  static constexpr const char* kLogFile = "judgments.log";
  static constexpr const char* kSnapshotFile = "model.bin";

 private:
  struct Question {
    PairKey pair;
    std::int64_t issued_at = 0;
    bool answered = false;
    bool expired = false;
  };
  struct GridEntry {
    HeatmapGrid grid;
    nlohmann::json body;
  };

  static Response no_corpus() { return Response::failure(409, "error", "no corpus loaded"); }

  void install_corpus(Corpus corpus) {
    corpus_ = std::make_shared<const Corpus>(std::move(corpus));
    embedder_ = std::make_shared<const RandomProjectionEmbedder>(*corpus_, config_.dims.text_dim, config_.embed_seed);
    table_ = std::make_shared<const InputTable>(*corpus_, *embedder_);
    model_ = std::make_shared<const EventModelParams>(
        init_model(config_.dims, corpus_->axis().num_days, config_.model_seed, embedder_->id()));
    log_ = JudgmentLog{};
    log_lines_.clear();
    questions_.clear();
    grids_.clear();
    question_rng_.seed(config_.question_seed);
    current_rows_ = config_.default_rows;
  }

  const GridEntry& grid_locked(std::size_t rows) {
    auto it = grids_.find(rows);
    if (it != grids_.end() && it->second.grid.model_version == model_->version) return it->second;
    GridEntry e;
    e.grid = build_heatmap(*corpus_, *table_, *model_, rows, config_.label_words);
    e.body = to_json(e.grid);
    e.body["status"] = "ok";
    return grids_[rows] = std::move(e);
  }

  void expire_tokens_locked() {
    const auto now = clock_();
    for (auto& [tok, q] : questions_)
      if (!q.answered && !q.expired && now - q.issued_at >= config_.token_ttl_seconds) q.expired = true;
  }

  std::string make_token() {
    static constexpr char hex[] = "0123456789abcdef";
    std::string t;
    do {
      t.clear();
      for (int i = 0; i < 2; ++i) {
        auto v = question_rng_();
        for (int k = 0; k < 16; ++k, v >>= 4) t.push_back(hex[v & 0xF]);
      }
    } while (questions_.contains(t));
    return t;
  }

  nlohmann::json render(const std::string& id) const {
    const auto& d = corpus_->doc(corpus_->position(id));
    const std::int64_t day = floor_day(d.timestamp);
    using namespace std::chrono;
    const year_month_day ymd{sys_days{days{day}}};
    char date[16];
    std::snprintf(date, sizeof(date), "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    nlohmann::json j{{"id", d.id}, {"text", d.text}, {"timestamp", d.timestamp}, {"date", date}};
    if (d.source) j["source"] = *d.source;
    return j;
  }

  void append_log(const nlohmann::json& rec) {
    auto line = rec.dump();
    if (!config_.data_dir.empty()) {
      std::ofstream out(std::filesystem::path(config_.data_dir) / kLogFile, std::ios::app);
      out << line << '\n';
      out.flush();
      if (!out) throw Error("judgment log: write failed");
    }
    log_lines_.push_back(std::move(line));
  }

  void persist_snapshot() {
    if (config_.data_dir.empty()) return;
    const auto dir = std::filesystem::path(config_.data_dir);
    const auto tmp = dir / (std::string(kSnapshotFile) + ".tmp");
    save_snapshot_file(*model_, tmp.string());
    std::filesystem::rename(tmp, dir / kSnapshotFile);
  }

  TrainingData training_data(const TrainConfig& cfg) const {
    TrainingData data;
    if (cfg.mining_mode == MiningMode::Offline) {
      data.triplets = build_triplets(log_);
    } else {
      for (const auto& [id, group] : provisional_groups(log_)) data.labeled.push_back({id, group});
    }
    return data;
  }

  static bool has_training_data(const TrainingData& data, const TrainConfig& cfg) {
    if (cfg.mining_mode == MiningMode::Offline) return !data.triplets.empty();
    std::map<std::string, int> sizes;
    for (const auto& b : data.labeled) ++sizes[b.label];
    bool group = false;
    for (const auto& [_, n] : sizes) group = group || n >= 2;
    return sizes.size() >= 2 && group;
  }

  Response run_training(const nlohmann::json& overrides) {
    TrainConfig cfg;
    TrainingData data;
    std::shared_ptr<const EventModelParams> base;
    std::shared_ptr<const InputTable> table;
    {
      std::unique_lock lk(mu_);
      if (!corpus_) return no_corpus();
      try {
        cfg = apply_overrides(config_.train, overrides);
      } catch (const Error& e) {
        return Response::failure(400, "error", e.what());
      }
      data = training_data(cfg);
      if (!has_training_data(data, cfg))
        return Response::failure(422, "error",
                                 cfg.mining_mode == MiningMode::Offline
                                     ? "no triplets: record a same-event and a different-event judgment that share "
                                       "an anchor document"
                                     : "no provisional label groups: batch-hard mining needs at least two groups, "
                                       "one with two or more documents");
      // The marker is written when the training set is fixed, so a replay
      // trains on exactly the judgments that precede it.
      append_log({{"kind", "retrain"}, {"config", to_json(cfg)}, {"from_version", model_->version}});
      base = model_;
      table = table_;
    }
    auto next = std::make_shared<const EventModelParams>(train(*base, data, cfg, *table));
    std::unique_lock lk(mu_);
    if (table != table_) return Response::failure(409, "error", "corpus replaced during training");
    model_ = next;
    grids_.clear();
    persist_snapshot();
    return Response::success({{"model_version", model_->version}, {"triplets", data.triplets.size()},
                              {"labeled", data.labeled.size()}, {"config", to_json(cfg)}});
  }

  void replay_record(const nlohmann::json& rec) {
    const auto kind = rec.value("kind", std::string("judgment"));
    if (kind == "judgment") {
      const auto j = judgment_from_json(rec);
      record_judgment(j, log_, *corpus_);
      log_lines_.push_back(rec.dump());
    } else if (kind == "retrain") {
      const auto cfg = apply_overrides(TrainConfig{}, rec.at("config"));
      const auto data = training_data(cfg);
      if (!has_training_data(data, cfg)) throw Error("replay: retrain marker without training data");
      log_lines_.push_back(rec.dump());
      model_ = std::make_shared<const EventModelParams>(train(*model_, data, cfg, *table_));
      grids_.clear();
      persist_snapshot();
    } else {
      throw Error("replay: unknown record kind '" + kind + "'");
    }
  }

  SessionConfig config_;
  Clock clock_;

  mutable std::shared_mutex mu_;
  std::shared_ptr<const Corpus> corpus_;
  std::shared_ptr<const RandomProjectionEmbedder> embedder_;
  std::shared_ptr<const InputTable> table_;
  std::shared_ptr<const EventModelParams> model_;
  JudgmentLog log_;
  std::vector<std::string> log_lines_;
  std::map<std::string, Question> questions_;
  std::map<std::size_t, GridEntry> grids_;
  Rng question_rng_;
  std::size_t current_rows_ = kDefaultRows;

  std::mutex train_mu_;
  std::shared_future<Response> inflight_;
  std::atomic<std::size_t> training_runs_{0};
};

}  // namespace tdt
