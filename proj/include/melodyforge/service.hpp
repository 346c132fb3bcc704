#pragma once

// HTTP front end for generation: POST /api/generate, GET /api/health and
// optional static files for the studio UI.

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "melodyforge/model.hpp"

namespace httplib {
class Server;
}

namespace melodyforge::service {

struct ServiceConfig {
  std::string checkpoint_path;
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 binds an ephemeral port
  int max_concurrent = 4;
  double max_seconds = 300.0;
  std::string static_dir;  // served at / when set
};

struct Response {
  int status = 200;
  std::string content_type;
  std::string body;
  std::map<std::string, std::string> headers;
};

class GenerationService {
 public:
  explicit GenerationService(ServiceConfig config);
  ~GenerationService();
  GenerationService(const GenerationService&) = delete;
  GenerationService& operator=(const GenerationService&) = delete;

  /// Installs parameters directly (tests, embedding).
  void set_model(nn::ModelParams params);
  /// Reads config.checkpoint_path on a background thread; until it finishes
  /// /api/generate answers 503.
  void load_model_async();
  void wait_for_model();

  bool model_loaded() const;
  std::string load_error() const;
  /// Recomputed from the live parameters on every call.
  std::uint64_t model_fingerprint() const;
  /// Computed once when the model was installed; reported by /api/health.
  std::uint64_t loaded_fingerprint() const;
  int active_generations() const { return active_.load(); }

  Response handle_generate(const std::string& json_body);
  Response handle_health() const;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();

 private:
  void install_routes();
  std::shared_ptr<const nn::ModelParams> model() const;

  ServiceConfig config_;
  std::unique_ptr<httplib::Server> server_;
  std::thread listener_;
  std::thread loader_;
  mutable std::mutex mutex_;
  std::shared_ptr<const nn::ModelParams> model_;
  std::uint64_t model_hash_ = 0;
  std::string load_error_;
  std::atomic<int> active_{0};
  std::atomic<std::uint64_t> generation_counter_{0};
};

}  // namespace melodyforge::service
