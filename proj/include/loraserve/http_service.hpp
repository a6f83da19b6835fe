#pragma once

#include <memory>
#include <string>
#include <vector>

#include "loraserve/engine.hpp"

namespace loraserve {

struct ServiceConfig {
    std::string    host = "127.0.0.1";
    int            port = 8080;  // 0 binds an ephemeral port
    ToyModelConfig model;
    std::string    registry_path;
    std::string    router_path;  // optional; untrained scorer when empty
    EngineConfig   engine;
};

ServiceConfig load_service_config(const std::string & json_path);

// Whitespace-split words hashed into the vocab (the top token is reserved).
// A convenience for text bodies; token-id arrays are the canonical input.
int              tokenize_word(const std::string & word, int vocab_size);
std::vector<int> tokenize_text(const std::string & text, int vocab_size);

// JSON service over a real-clock engine:
//   POST /completion {prompt, adapter_id?, n_predict?} ->
//        {tokens, adapter_used, selection_kind, first_token_ms, total_ms}
//   GET  /metrics  -> live metrics snapshot plus cache hit rate
//   GET  /health   -> status and slot occupancy
class HttpService {
  public:
    explicit HttpService(const ServiceConfig & config);
    ~HttpService();

    HttpService(const HttpService &)             = delete;
    HttpService & operator=(const HttpService &) = delete;

    // Binds and serves on background threads; returns the bound port.
    int  start();
    void stop();

    int      port() const { return port_; }
    Engine & engine();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int                   port_ = 0;
};

}  // namespace loraserve
