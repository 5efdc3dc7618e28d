#pragma once

#include <cstddef>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>

#include "serve/predictor.hpp"

namespace httplib {
class Server;
}

namespace cxr {

enum class LogFormat { kText, kJson };

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::size_t max_body_bytes = 10u << 20;
  LogFormat log_format = LogFormat::kText;
  std::optional<std::string> static_dir;
  std::size_t threads = 8;
};

// "host:port"; throws UsageError on malformed input.
void parse_bind(const std::string& bind, ServeConfig& cfg);

// HTTP front end for a Predictor:
//   POST /api/v1/predict   raw image/png, image/jpeg or multipart field "file"
//   GET  /api/v1/health
//   GET  /api/v1/model
// Every 4xx/5xx response body is {"error": {"code", "message"}}.
class InferenceServer {
 public:
  InferenceServer(std::shared_ptr<const Predictor> predictor, ServeConfig cfg,
                  std::ostream* access_log);
  ~InferenceServer();

  // Returns the bound port; throws Error(kRuntime) on bind failure.
  int bind();
  // Blocks until stop().
  void run();
  void stop();

 private:
  void log_request(const std::string& method, const std::string& path, int status,
                   double latency_ms);

  std::shared_ptr<const Predictor> predictor_;
  ServeConfig cfg_;
  std::ostream* log_;
  std::mutex log_mutex_;
  std::unique_ptr<httplib::Server> http_;
};

}  // namespace cxr
