#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "tdt/http.hpp"
#include "tdt/tdt.hpp"

using namespace tdt;

namespace {

Corpus read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus '" + path + "'");
  return parse_corpus(in);
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return nlohmann::json::parse(in);
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
}

struct Scored {
  Corpus corpus;
  std::unique_ptr<InputTable> table;
  EventModelParams model;
};

Scored load_model(const std::string& corpus_path, const std::string& model_path, const SessionConfig& cfg) {
  Scored s{read_corpus(corpus_path), nullptr, {}};
  RandomProjectionEmbedder embedder(s.corpus, cfg.dims.text_dim, cfg.embed_seed);
  s.table = std::make_unique<InputTable>(s.corpus, embedder);
  s.model = model_path.empty() ? init_model(cfg.dims, s.corpus.axis().num_days, cfg.model_seed, embedder.id())
                               : load_snapshot_file(model_path);
  return s;
}

std::string grid_svg(const HeatmapGrid& g) {
  constexpr int cell = 14, label_w = 220, top = 20;
  const int width = label_w + static_cast<int>(g.days) * cell + 10;
  const int height = top + static_cast<int>(g.rows) * cell + 10;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  svg << "<text x=\"4\" y=\"12\">model v" << g.model_version << ", " << g.rows << " rows x " << g.days
      << " days</text>\n";
  for (std::size_t r = 0; r < g.rows; ++r) {
    const int y = top + static_cast<int>(r) * cell;
    std::string label;
    if (r < g.row_labels.size())
      for (const auto& [word, _] : g.row_labels[r]) label += (label.empty() ? "" : " ") + word;
    svg << "<text x=\"4\" y=\"" << y + cell - 3 << "\">" << label << "</text>\n";
    for (std::size_t d = 0; d < g.days; ++d) {
      const auto& c = g.cell(r, d);
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - c.intensity)));
      svg << "<rect x=\"" << label_w + static_cast<int>(d) * cell << "\" y=\"" << y << "\" width=\"" << cell
          << "\" height=\"" << cell << "\" fill=\"rgb(" << shade << "," << shade << ",255)\"><title>row " << r
          << " day " << d << ": " << c.count << " docs, " << c.intensity << "</title></rect>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

httplib::Server* running_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Topic-time heatmaps with human-in-the-loop event representation learning"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON session config (TDT_* environment variables override it)");

  auto* serve = app.add_subcommand("serve", "Run the HTTP annotation server");
  std::optional<std::string> host, data_dir;
  std::optional<int> port;
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--data-dir", data_dir, "Directory for corpus, judgment log and model snapshot");

  auto* generate = app.add_subcommand("generate", "Write a synthetic corpus and its gold assignment");
  SyntheticSpec spec;
  std::string corpus_out, gold_out;
  int burst_docs = 0, burst_day = 30;
  auto add_spec = [&](CLI::App* sub) {
    sub->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
    sub->add_option("--events", spec.num_events, "Number of random events")->capture_default_str();
    sub->add_option("--days", spec.days, "Length of the time axis")->capture_default_str();
    sub->add_option("--background", spec.background_rate, "Background-token probability")->capture_default_str();
    sub->add_option("--burst-docs", burst_docs, "Add a 3-day burst event with this many documents");
    sub->add_option("--burst-day", burst_day, "First day of the burst")->capture_default_str();
  };
  add_spec(generate);
  generate->add_option("-o,--out", corpus_out, "Corpus JSONL output")->required();
  generate->add_option("--gold", gold_out, "Gold assignment JSON output");

  std::string corpus_path, model_path, out_path, format = "json";
  std::size_t rows = kDefaultRows;
  std::optional<double> tau;

  auto* heat = app.add_subcommand("heatmap", "Build a topic-time heatmap for a corpus");
  heat->add_option("--corpus", corpus_path, "Corpus JSONL")->required();
  heat->add_option("--model", model_path, "Model snapshot (default: untrained model)");
  heat->add_option("--rows", rows, "Topic rows")->capture_default_str();
  heat->add_option("--format", format, "json or svg")->check(CLI::IsMember({"json", "svg"}))->capture_default_str();
  heat->add_option("-o,--out", out_path, "Output file (default stdout)");

  auto* cluster = app.add_subcommand("cluster", "Online event clustering of a corpus");
  cluster->add_option("--corpus", corpus_path, "Corpus JSONL")->required();
  cluster->add_option("--model", model_path, "Model snapshot (default: untrained model)");
  cluster->add_option("--tau", tau, "Cosine threshold in (-1, 1)");
  cluster->add_option("-o,--out", out_path, "Output file (default stdout)");

  std::string gold_path;
  auto* evaluate = app.add_subcommand("evaluate", "BCubed and row purity against a gold assignment");
  evaluate->add_option("--corpus", corpus_path, "Corpus JSONL")->required();
  evaluate->add_option("--gold", gold_path, "Gold assignment JSON")->required();
  evaluate->add_option("--model", model_path, "Model snapshot (default: untrained model)");
  evaluate->add_option("--tau", tau, "Cosine threshold in (-1, 1)");
  evaluate->add_option("--rows", rows, "Topic rows for purity")->capture_default_str();

  auto* simulate = app.add_subcommand("simulate", "Run the simulated annotation loop and print the learning curve");
  add_spec(simulate);
  LoopConfig loop;
  int budget = 200;
  std::string model_out;
  simulate->add_option("--budget", budget, "Judgments to spend")->capture_default_str();
  simulate->add_option("--retrain-every", loop.retrain_every, "Judgments between retrains")->capture_default_str();
  simulate->add_option("--noise", loop.noise_rate, "Annotator flip probability")->capture_default_str();
  simulate->add_option("--rows", loop.rows, "Topic rows")->capture_default_str();
  simulate->add_option("-o,--out", out_path, "Curve CSV output (default stdout)");
  simulate->add_option("--save-model", model_out, "Write the final model snapshot");

  CLI11_PARSE(app, argc, argv);

  try {
    const SessionConfig cfg = load_session_config(config_path, *simulate ? simulation_session() : SessionConfig{});
    if (burst_docs > 0) spec.pinned.push_back({burst_docs, burst_day, 3, 0.0});

    if (*serve) {
      SessionConfig sc = cfg;
      if (host) sc.host = *host;
      if (port) sc.port = *port;
      if (data_dir) sc.data_dir = *data_dir;
      Session session(sc);
      if (session.restore()) std::cerr << "restored state from " << sc.data_dir << "\n";
      httplib::Server server;
      mount_routes(server, session);
      running_server = &server;
      std::signal(SIGINT, [](int) { running_server->stop(); });
      std::signal(SIGTERM, [](int) { running_server->stop(); });
      std::cerr << "listening on " << sc.host << ":" << sc.port << "\n";
      if (!server.listen(sc.host, sc.port)) throw Error("cannot listen on " + sc.host + ":" + std::to_string(sc.port));
    } else if (*generate) {
      const auto sc = generate_corpus(spec);
      write_output(corpus_out, corpus_to_jsonl(sc.corpus));
      if (!gold_out.empty()) write_output(gold_out, nlohmann::json(sc.gold).dump(2) + "\n");
      std::cerr << sc.corpus.size() << " documents, " << sc.event_words.size() << " events\n";
    } else if (*heat) {
      const auto s = load_model(corpus_path, model_path, cfg);
      auto grid = build_heatmap(s.corpus, *s.table, s.model, rows, cfg.label_words);
      write_output(out_path, format == "svg" ? grid_svg(grid) : to_json(grid).dump() + "\n");
    } else if (*cluster) {
      const auto s = load_model(corpus_path, model_path, cfg);
      const auto c = cluster_corpus(s.corpus, *s.table, s.model, tau.value_or(cfg.threshold));
      write_output(out_path, to_json(c).dump(2) + "\n");
    } else if (*evaluate) {
      const auto s = load_model(corpus_path, model_path, cfg);
      const auto gold = assignment_from_json(read_json(gold_path));
      const auto c = cluster_corpus(s.corpus, *s.table, s.model, tau.value_or(cfg.threshold));
      auto body = to_json(bcubed(c.assignment, gold));
      body["row_purity"] = row_purity(build_heatmap(s.corpus, *s.table, s.model, rows, cfg.label_words), gold);
      body["num_events"] = c.centroids.size();
      std::cout << body.dump(2) << "\n";
    } else if (*simulate) {
      loop.session = cfg;
      const auto sc = generate_corpus(spec);
      const auto r = run_loop(sc.corpus, sc.gold, budget, loop);
      write_output(out_path, curve_to_csv(r));
      if (!model_out.empty()) save_snapshot_file(r.final_model, model_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
