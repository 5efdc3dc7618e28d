#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <ctime>

#include "core/error.hpp"
#include "serve/server.hpp"

namespace cxr {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

thread_local std::optional<Clock::time_point> request_start;

std::string default_code(int status) {
  switch (status) {
    case 400: return "bad_request";
    case 404: return "not_found";
    case 405: return "method_not_allowed";
    case 413: return "payload_too_large";
    case 414: return "uri_too_long";
    case 415: return "unsupported_media_type";
    default: return status >= 500 ? "internal_error" : "client_error";
  }
}

void send_error(httplib::Response& res, int status, const std::string& code,
                const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", {{"code", code}, {"message", message}}}}.dump(),
                  "application/json");
}

std::string media_type(const std::string& content_type) {
  std::string t = content_type.substr(0, content_type.find(';'));
  while (!t.empty() && t.back() == ' ') t.pop_back();
  for (char& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return t;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void parse_bind(const std::string& bind, ServeConfig& cfg) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == bind.size()) {
    throw UsageError("bind address must be HOST:PORT, got '" + bind + "'");
  }
  const std::string port = bind.substr(colon + 1);
  if (port.find_first_not_of("0123456789") != std::string::npos || port.size() > 5 ||
      std::stoi(port) > 65535) {
    throw UsageError("invalid port in bind address '" + bind + "'");
  }
  cfg.host = bind.substr(0, colon);
  cfg.port = std::stoi(port);
}

InferenceServer::InferenceServer(std::shared_ptr<const Predictor> predictor, ServeConfig cfg,
                                 std::ostream* access_log)
    : predictor_(std::move(predictor)),
      cfg_(std::move(cfg)),
      log_(access_log),
      http_(std::make_unique<httplib::Server>()) {
  auto& svr = *http_;
  const std::size_t threads = cfg_.threads;
  svr.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  svr.set_payload_max_length(cfg_.max_body_bytes);

  svr.set_pre_routing_handler([](const httplib::Request&, httplib::Response&) {
    request_start = Clock::now();
    return httplib::Server::HandlerResponse::Unhandled;
  });
  svr.set_logger([this](const httplib::Request& req, const httplib::Response& res) {
    const double ms =
        request_start
            ? std::chrono::duration<double, std::milli>(Clock::now() - *request_start).count()
            : 0.0;
    request_start.reset();
    log_request(req.method, req.path, res.status, ms);
  });
  svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      send_error(res, res.status, default_code(res.status), httplib::status_message(res.status));
    }
    return httplib::Server::HandlerResponse::Handled;
  });
  svr.set_exception_handler(
      [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "unexpected server error";
        try {
          std::rethrow_exception(ep);
        } catch (const std::exception& e) {
          what = e.what();
        } catch (...) {
        }
        send_error(res, 500, "internal_error", what);
      });

  auto predictor_ref = predictor_;
  svr.Get("/api/v1/health", [predictor_ref](const httplib::Request&, httplib::Response& res) {
    res.set_content(predictor_ref->health_json(), "application/json");
  });
  const std::string model_json = predictor_->model_json();
  svr.Get("/api/v1/model", [model_json](const httplib::Request&, httplib::Response& res) {
    res.set_content(model_json, "application/json");
  });
  svr.Post("/api/v1/predict", [predictor_ref](const httplib::Request& req,
                                              httplib::Response& res) {
    std::string_view payload;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("file")) {
        send_error(res, 400, "missing_file", "multipart request has no \"file\" field");
        return;
      }
      const auto& f = req.files.find("file")->second;
      payload = f.content;
    } else {
      const std::string type = media_type(req.get_header_value("Content-Type"));
      if (type != "image/png" && type != "image/jpeg" && type != "image/x-portable-graymap") {
        send_error(res, 415, "unsupported_media_type",
                   "content type must be image/png, image/jpeg, image/x-portable-graymap or multipart/form-data, got '" +
                       type + "'");
        return;
      }
      payload = req.body;
    }
    try {
      const auto* p = reinterpret_cast<const std::uint8_t*>(payload.data());
      const PredictionReport report = predictor_ref->predict({p, payload.size()});
      res.set_content(report.to_json(), "application/json");
    } catch (const DataFormatError& e) {
      send_error(res, 400, "decode_failed", e.what());
    }
  });
  auto wrong_method = [](const char* allowed) {
    return [allowed](const httplib::Request&, httplib::Response& res) {
      send_error(res, 405, "method_not_allowed", std::string("use ") + allowed);
      res.set_header("Allow", allowed);
    };
  };
  for (const char* path : {"/api/v1/health", "/api/v1/model"}) {
    svr.Post(path, wrong_method("GET"));
    svr.Put(path, wrong_method("GET"));
    svr.Delete(path, wrong_method("GET"));
    svr.Patch(path, wrong_method("GET"));
  }
  svr.Get("/api/v1/predict", wrong_method("POST"));
  svr.Put("/api/v1/predict", wrong_method("POST"));
  svr.Delete("/api/v1/predict", wrong_method("POST"));
  svr.Patch("/api/v1/predict", wrong_method("POST"));

  if (cfg_.static_dir && !svr.set_mount_point("/", *cfg_.static_dir)) {
    throw UsageError("static directory does not exist: " + *cfg_.static_dir);
  }
}

InferenceServer::~InferenceServer() { stop(); }

int InferenceServer::bind() {
  int port = cfg_.port;
  if (port == 0) {
    port = http_->bind_to_any_port(cfg_.host);
    if (port < 0) port = 0;
  } else if (!http_->bind_to_port(cfg_.host, port)) {
    port = 0;
  }
  if (port == 0) {
    throw Error(ErrorKind::kRuntime, "cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
  }
  cfg_.port = port;
  return port;
}

void InferenceServer::run() {
  if (!http_->listen_after_bind()) {
    throw Error(ErrorKind::kRuntime, "server stopped unexpectedly");
  }
}

void InferenceServer::stop() {
  if (http_) http_->stop();
}

void InferenceServer::log_request(const std::string& method, const std::string& path,
                                  int status, double latency_ms) {
  if (!log_) return;
  std::string line;
  if (cfg_.log_format == LogFormat::kJson) {
    line = json{{"ts", utc_now()},
                {"method", method},
                {"path", path},
                {"status", status},
                {"latency_ms", std::round(latency_ms * 1000.0) / 1000.0}}
               .dump();
  } else {
    char buf[64];
    std::snprintf(buf, sizeof buf, " %d %.3fms", status, latency_ms);
    line = utc_now() + " " + method + " " + path + buf;
  }
  std::lock_guard lock(log_mutex_);
  *log_ << line << '\n' << std::flush;
}

}  // namespace cxr
