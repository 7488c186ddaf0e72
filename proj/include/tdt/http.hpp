#pragma once

#include <optional>
#include <string>

// Corpus uploads arrive with whatever content type the client defaults to.
#ifndef CPPHTTPLIB_FORM_URL_ENCODED_PAYLOAD_MAX_LENGTH
#define CPPHTTPLIB_FORM_URL_ENCODED_PAYLOAD_MAX_LENGTH (256u << 20)
#endif
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "tdt/session.hpp"

namespace tdt {

namespace detail {

inline void reply(httplib::Response& res, const Response& r) {
  res.status = r.code;
  res.set_content(r.body.dump(), "application/json");
}

inline void bad_request(httplib::Response& res, const std::string& msg) {
  reply(res, Response::failure(400, "error", msg));
}

template <typename T>
std::optional<T> query(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  const auto v = req.get_param_value(key);
  std::size_t used = 0;
  if constexpr (std::is_floating_point_v<T>) {
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(key);
    return static_cast<T>(d);
  } else {
    const long long n = std::stoll(v, &used);
    if (used != v.size() || n < 0) throw std::invalid_argument(key);
    return static_cast<T>(n);
  }
}

inline nlohmann::json body_json(const httplib::Request& req) {
  if (req.body.empty()) return nullptr;
  return nlohmann::json::parse(req.body);
}

}  // namespace detail

/// Routes:
///   POST /corpus        body: newline-delimited document records
///   GET  /heatmap       ?rows=M
///   GET  /cell          ?row=&day=&n=[&seed=]
///   POST /question      {"row_lo","row_hi","day_lo","day_hi"[,"rows"]}
///   POST /judgment      {"token","label","annotator"}
///   POST /retrain       optional train-config overrides
///   GET  /clustering    [?tau=]
///   POST /evaluation    {"gold": {doc id: event id}}[, "tau"]
///   GET  /feedback      [?tau=]
///   GET  /status
inline void mount_routes(httplib::Server& server, Session& session) {
  using detail::reply;
  auto guarded = [](auto handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const nlohmann::json::exception& e) {
        detail::bad_request(res, std::string("malformed request body: ") + e.what());
      } catch (const std::invalid_argument& e) {
        detail::bad_request(res, std::string("malformed query parameter: ") + e.what());
      } catch (const std::out_of_range& e) {
        detail::bad_request(res, std::string("query parameter out of range: ") + e.what());
      } catch (const Error& e) {
        detail::bad_request(res, e.what());
      }
    };
  };

  server.Post("/corpus", guarded([&](const httplib::Request& req, httplib::Response& res) {
                reply(res, session.upload_corpus(req.body));
              }));
  server.Get("/heatmap", guarded([&](const httplib::Request& req, httplib::Response& res) {
               reply(res, session.heatmap(detail::query<std::size_t>(req, "rows")));
             }));
  server.Get("/cell", guarded([&](const httplib::Request& req, httplib::Response& res) {
               const auto row = detail::query<std::size_t>(req, "row");
               const auto day = detail::query<std::size_t>(req, "day");
               if (!row || !day) return detail::bad_request(res, "row and day are required");
               const auto n = detail::query<std::size_t>(req, "n").value_or(10);
               reply(res, session.cell_sample(*row, *day, n, detail::query<std::uint64_t>(req, "seed")));
             }));
  server.Post("/question", guarded([&](const httplib::Request& req, httplib::Response& res) {
                const auto j = detail::body_json(req);
                std::optional<std::size_t> rows;
                if (j.contains("rows")) rows = j["rows"].get<std::size_t>();
                reply(res, session.region_question(region_from_json(j), rows));
              }));
  server.Post("/judgment", guarded([&](const httplib::Request& req, httplib::Response& res) {
                const auto j = detail::body_json(req);
                reply(res, session.submit_judgment(j.at("token").get<std::string>(), j.at("label").get<std::string>(),
                                                   j.value("annotator", std::string("anonymous"))));
              }));
  server.Post("/retrain", guarded([&](const httplib::Request& req, httplib::Response& res) {
                reply(res, session.retrain(detail::body_json(req)));
              }));
  server.Get("/clustering", guarded([&](const httplib::Request& req, httplib::Response& res) {
               reply(res, session.clustering(detail::query<double>(req, "tau")));
             }));
  server.Post("/evaluation", guarded([&](const httplib::Request& req, httplib::Response& res) {
                const auto j = detail::body_json(req);
                std::optional<double> tau;
                if (j.contains("tau")) tau = j["tau"].get<double>();
                reply(res, session.evaluation(j.at("gold"), tau));
              }));
  server.Get("/feedback", guarded([&](const httplib::Request& req, httplib::Response& res) {
               reply(res, session.feedback_report(detail::query<double>(req, "tau")));
             }));
  server.Get("/status", guarded([&](const httplib::Request&, httplib::Response& res) { reply(res, session.status()); }));
}

}  // namespace tdt
