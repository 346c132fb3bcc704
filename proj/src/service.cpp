#include "melodyforge/service.hpp"

#include <httplib.h>

#include <json.hpp>
#include <random>
#include <sstream>

#include "melodyforge/error.hpp"
#include "melodyforge/generator.hpp"
#include "melodyforge/pianoroll.hpp"
#include "melodyforge/trainer.hpp"

namespace melodyforge::service {

namespace {

using nlohmann::json;

Response json_response(int status, const json& body) { return {status, "application/json", body.dump(), {}}; }

Response error_response(int status, const std::string& message) { return json_response(status, {{"error", message}}); }

class SlotGuard {
 public:
  SlotGuard(std::atomic<int>& counter, int limit) : counter_(counter) { acquired_ = counter_.fetch_add(1) < limit; }
  ~SlotGuard() { counter_.fetch_sub(1); }
  bool acquired() const { return acquired_; }

 private:
  std::atomic<int>& counter_;
  bool acquired_;
};

void send(httplib::Response& res, const Response& r) {
  res.status = r.status;
  for (const auto& [k, v] : r.headers) res.set_header(k, v);
  res.set_content(r.body, r.content_type);
}

}  // namespace

GenerationService::GenerationService(ServiceConfig config) : config_(std::move(config)), server_(std::make_unique<httplib::Server>()) {
  if (config_.max_concurrent < 1 || !(config_.max_seconds > 0.0)) throw Error(Errc::InvalidConfig, "service limits must be positive");
  install_routes();
}

GenerationService::~GenerationService() {
  stop();
  if (loader_.joinable()) loader_.join();
}

void GenerationService::set_model(nn::ModelParams params) {
  params.check_shapes();
  const std::uint64_t hash = nn::fingerprint(params);
  auto ptr = std::make_shared<const nn::ModelParams>(std::move(params));
  std::lock_guard lock(mutex_);
  model_ = std::move(ptr);
  model_hash_ = hash;
  load_error_.clear();
}

void GenerationService::load_model_async() {
  if (loader_.joinable()) loader_.join();
  loader_ = std::thread([this] {
    try {
      auto ck = train::load_checkpoint(smf::read_file(config_.checkpoint_path));
      set_model(std::move(ck.params));
    } catch (const std::exception& e) {
      std::lock_guard lock(mutex_);
      load_error_ = e.what();
    }
  });
}

void GenerationService::wait_for_model() {
  if (loader_.joinable()) loader_.join();
}

bool GenerationService::model_loaded() const { return model() != nullptr; }

std::string GenerationService::load_error() const {
  std::lock_guard lock(mutex_);
  return load_error_;
}

std::uint64_t GenerationService::model_fingerprint() const {
  auto m = model();
  return m ? nn::fingerprint(*m) : 0;
}

std::uint64_t GenerationService::loaded_fingerprint() const {
  std::lock_guard lock(mutex_);
  return model_hash_;
}

std::shared_ptr<const nn::ModelParams> GenerationService::model() const {
  std::lock_guard lock(mutex_);
  return model_;
}

Response GenerationService::handle_health() const {
  auto m = model();
  json body{{"status", "ok"}, {"model_loaded", m != nullptr}, {"active_generations", active_.load()}};
  if (m) {
    body["dims"] = {{"vocab", m->dims.vocab}, {"hidden", m->dims.hidden}, {"dec_hidden", m->dims.dec_hidden()}};
    std::ostringstream hex;
    hex << std::hex << loaded_fingerprint();
    body["params_hash"] = hex.str();
  } else {
    body["dims"] = nullptr;
    if (auto err = load_error(); !err.empty()) body["load_error"] = err;
  }
  return json_response(200, body);
}

Response GenerationService::handle_generate(const std::string& json_body) {
  auto params = model();
  if (!params) return error_response(503, "model is loading");

  gen::GenerationRequest req;
  try {
    json body = json_body.empty() ? json::object() : json::parse(json_body);
    if (!body.is_object()) return error_response(400, "request body must be a JSON object");
    req.rng_seed = std::random_device{}() | static_cast<std::uint64_t>(std::random_device{}()) << 32;
    if (body.contains("rng_seed") && !body["rng_seed"].is_null()) {
      if (!body["rng_seed"].is_number_unsigned())
        return error_response(400, "rng_seed must be a non-negative integer");
      req.rng_seed = body["rng_seed"].get<std::uint64_t>();
    }
    if (body.contains("seed_notes") && !body["seed_notes"].is_null()) {
      if (!body["seed_notes"].is_string()) return error_response(400, "seed_notes must be a string such as \"A4,C5\"");
      req.seed_tokens = roll::parse_note_list(body["seed_notes"].get<std::string>());
    }
    if (req.seed_tokens.empty()) req.seed_tokens = {gen::random_seed_note(req.rng_seed)};
    for (const char* key : {"seconds", "temperature", "tempo_bpm"}) {
      if (body.contains(key) && !body[key].is_null() && !body[key].is_number()) return error_response(400, std::string(key) + " must be a number");
    }
    req.target_seconds = body.value("seconds", gen::kDefaultSeconds);
    req.temperature = body.value("temperature", gen::kDefaultTemperature);
    req.tempo_bpm = body.value("tempo_bpm", roll::kDefaultTempoBpm);
    if (req.target_seconds > config_.max_seconds)
      return error_response(400, "seconds exceeds the service limit of " + std::to_string(config_.max_seconds));
    req.validate(params->dims.vocab);
  } catch (const json::exception& e) {
    return error_response(400, std::string("malformed JSON: ") + e.what());
  } catch (const Error& e) {
    return error_response(400, e.what());
  }

  SlotGuard slot(active_, config_.max_concurrent);
  if (!slot.acquired()) return error_response(429, "too many concurrent generations");

  Response r;
  try {
    smf::Bytes midi = gen::generate_to_midi(req, *params);
    r.body.assign(midi.begin(), midi.end());
  } catch (const Error& e) {
    return error_response(500, e.what());
  }
  r.status = 200;
  r.content_type = "audio/midi";
  r.headers["X-Generation-Id"] = std::to_string(++generation_counter_);
  r.headers["X-Rng-Seed"] = std::to_string(req.rng_seed);
  r.headers["Content-Disposition"] = "attachment; filename=\"melodyforge.mid\"";
  return r;
}

void GenerationService::install_routes() {
  // Generations plus a few threads so /api/health never waits behind them.
  const int threads = config_.max_concurrent + 4;
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  server_->Post("/api/generate", [this](const httplib::Request& req, httplib::Response& res) { send(res, handle_generate(req.body)); });
  server_->Get("/api/health", [this](const httplib::Request&, httplib::Response& res) { send(res, handle_health()); });
  if (!config_.static_dir.empty()) {
    server_->set_mount_point("/", config_.static_dir);
  } else {
    server_->Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("melodyforge service\nPOST /api/generate  GET /api/health\n", "text/plain");
    });
  }
}

int GenerationService::start() {
  int port = config_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(config_.host);
  } else if (!server_->bind_to_port(config_.host, port)) {
    port = -1;
  }
  if (port < 0) throw std::runtime_error("cannot bind " + config_.host + ":" + std::to_string(config_.port));
  listener_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void GenerationService::run() {
  if (!server_->listen(config_.host, config_.port)) throw std::runtime_error("cannot listen on " + config_.host + ":" + std::to_string(config_.port));
}

void GenerationService::stop() {
  if (server_) server_->stop();
  if (listener_.joinable()) listener_.join();
}

}  // namespace melodyforge::service
