#include "loraserve/http_service.hpp"

#include <httplib.h>
#include <json.hpp>

#include <condition_variable>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include "loraserve/bench.hpp"

namespace loraserve {

using nlohmann::json;

ServiceConfig load_service_config(const std::string & json_path) {
    std::ifstream in(json_path);
    if (!in) {
        throw IoError("cannot open service config: " + json_path);
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception & e) {
        throw FormatError(std::string("bad service config: ") + e.what());
    }

    ServiceConfig cfg;
    cfg.host          = j.value("host", cfg.host);
    cfg.port          = j.value("port", cfg.port);
    cfg.registry_path = j.at("registry").get<std::string>();
    cfg.router_path   = j.value("router", std::string());

    if (j.contains("model")) {
        const json & m       = j["model"];
        cfg.model.vocab_size = m.value("vocab_size", cfg.model.vocab_size);
        cfg.model.hidden_dim = m.value("hidden_dim", cfg.model.hidden_dim);
        cfg.model.num_layers = m.value("num_layers", cfg.model.num_layers);
        cfg.model.seed       = m.value("seed", cfg.model.seed);
        cfg.model.eos_token  = m.value("eos_token", cfg.model.vocab_size - 1);
    }
    if (j.contains("engine")) {
        const json & e                    = j["engine"];
        cfg.engine.gamma                  = e.value("gamma", cfg.engine.gamma);
        cfg.engine.mode                   = engine_mode_from_string(e.value("mode", std::string("edgelora")));
        cfg.engine.selection.top_k        = e.value("k", cfg.engine.selection.top_k);
        cfg.engine.cache_capacity         = e.value("cache_capacity", cfg.engine.cache_capacity);
        cfg.engine.memory_budget_adapters = e.value("memory_budget_adapters", cfg.engine.memory_budget_adapters);
        cfg.engine.slo_threshold_ms       = e.value("slo_threshold_ms", cfg.engine.slo_threshold_ms);
        cfg.engine.queue_bound            = e.value("queue_bound", cfg.engine.queue_bound);
        cfg.engine.prefill_seed           = e.value("prefill_seed", cfg.engine.prefill_seed);
    }
    return cfg;
}

int tokenize_word(const std::string & word, int vocab_size) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : word) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return int(h % uint64_t(std::max(1, vocab_size - 1)));
}

std::vector<int> tokenize_text(const std::string & text, int vocab_size) {
    std::vector<int>  tokens;
    std::stringstream ss(text);
    std::string       word;
    while (ss >> word) {
        tokens.push_back(tokenize_word(word, vocab_size));
    }
    return tokens;
}

struct HttpService::Impl {
    ServiceConfig           config;
    ToyBaseModel            model;
    AdapterRegistry         registry;
    std::unique_ptr<Engine> engine;
    httplib::Server         server;
    std::thread             server_thread;
    std::thread             loop_thread;
    std::mutex              wake_mtx;
    std::condition_variable wake_cv;
    std::atomic<bool>       stopping{false};

    explicit Impl(const ServiceConfig & cfg) : config(cfg) {
        config.engine.virtual_clock = false;  // requests are timed on the wall clock

        model    = build_model(config.model);
        registry = AdapterRegistry::open(config.registry_path);

        RouterModel router;
        if (!config.router_path.empty()) {
            router = read_router_file(config.router_path);
            if (router.outputs != registry.count()) {
                throw ConfigError("router outputs do not match registry size");
            }
        } else {
            router = init_router(256, registry.count(), 1);
        }
        engine = std::make_unique<Engine>(model, registry, std::move(router), config.engine);
    }

    void compute_loop() {
        while (!stopping.load()) {
            if (engine->has_work()) {
                engine->step();
            } else {
                std::unique_lock<std::mutex> lock(wake_mtx);
                wake_cv.wait_for(lock, std::chrono::milliseconds(5));
            }
        }
    }

    void handle_completion(const httplib::Request & req, httplib::Response & res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception & e) {
            res.status = 400;
            res.set_content(json{{"error", std::string("bad json: ") + e.what()}}.dump(),
                            "application/json");
            return;
        }

        Request request;
        try {
            if (!body.contains("prompt")) {
                throw InputError("missing prompt");
            }
            if (body["prompt"].is_string()) {
                request.prompt = tokenize_text(body["prompt"].get<std::string>(), config.model.vocab_size);
            } else if (body["prompt"].is_array()) {
                request.prompt = body["prompt"].get<std::vector<int>>();
            } else {
                throw InputError("prompt must be a string or an array of token ids");
            }
            if (request.prompt.empty()) {
                throw InputError("prompt is empty");
            }
            for (int tok : request.prompt) {
                if (tok < 0 || tok >= config.model.vocab_size) {
                    throw InputError("token " + std::to_string(tok) + " out of vocab range");
                }
            }
            if (body.contains("adapter_id") && !body["adapter_id"].is_null()) {
                request.explicit_adapter = body["adapter_id"].get<int>();
            }
            request.max_new_tokens = std::max(1, body.value("n_predict", 16));
        } catch (const json::exception & e) {
            res.status = 400;
            res.set_content(json{{"error", std::string("bad request: ") + e.what()}}.dump(),
                            "application/json");
            return;
        } catch (const InputError & e) {
            res.status = 400;
            res.set_content(json{{"error", e.what()}}.dump(), "application/json");
            return;
        }

        if (request.explicit_adapter && !registry.valid_id(*request.explicit_adapter)) {
            res.status = 404;
            res.set_content(json{{"error", "unknown adapter_id"}}.dump(), "application/json");
            return;
        }

        auto promise = std::make_shared<std::promise<CompletionRecord>>();
        auto future  = promise->get_future();
        try {
            engine->submit(request, [promise](const CompletionRecord & rec) { promise->set_value(rec); });
        } catch (const RejectedError & e) {
            res.status = e.reason == RejectedError::Reason::Saturated ? 429 : 503;
            res.set_content(json{{"error", e.what()}}.dump(), "application/json");
            return;
        }
        wake_cv.notify_one();

        if (future.wait_for(std::chrono::seconds(120)) != std::future_status::ready) {
            res.status = 500;
            res.set_content(json{{"error", "request timed out"}}.dump(), "application/json");
            return;
        }
        const CompletionRecord rec = future.get();
        if (rec.failed) {
            res.status = 500;
            res.set_content(json{{"error", rec.error}}.dump(), "application/json");
            return;
        }
        res.set_content(json{
                            {"tokens", rec.tokens},
                            {"adapter_used", rec.adapter_used},
                            {"selection_kind", to_string(rec.selection_kind)},
                            {"first_token_ms", rec.first_token_ms - rec.arrival_ms},
                            {"total_ms", rec.completion_ms - rec.arrival_ms},
                        }
                            .dump(),
                        "application/json");
    }

    void handle_metrics(httplib::Response & res) {
        const std::vector<CompletionRecord> records = engine->completed_records();

        json out = {
            {"completed", 0},
            {"throughput_rps", 0.0},
            {"avg_request_latency_s", 0.0},
            {"avg_first_token_latency_s", 0.0},
            {"slo_attainment", 0.0},
            {"cache_hit_rate", engine->cache_hit_rate()},
        };
        const double elapsed_s = engine->now_ms() / 1000.0;
        if (!records.empty() && elapsed_s > 0.0) {
            try {
                const MetricsReport m = compute_metrics(records, config.engine.slo_threshold_ms, elapsed_s);
                out["completed"]                 = m.completed;
                out["throughput_rps"]            = m.throughput_rps;
                out["avg_request_latency_s"]     = m.avg_request_latency_s;
                out["avg_first_token_latency_s"] = m.avg_first_token_latency_s;
                out["slo_attainment"]            = m.slo_attainment;
            } catch (const InputError &) {
                // only failed records so far; keep the zeroed snapshot
            }
        }
        res.set_content(out.dump(), "application/json");
    }

    void handle_health(httplib::Response & res) {
        const EngineSnapshot snap = engine->snapshot();
        res.set_content(json{
                            {"status", "ok"},
                            {"slots_idle", snap.idle_slots},
                            {"slots_active", snap.active_slots},
                            {"queue_depth", snap.queue_depth},
                            {"completed", snap.completed},
                        }
                            .dump(),
                        "application/json");
    }
};

HttpService::HttpService(const ServiceConfig & config) : impl_(std::make_unique<Impl>(config)) {}

HttpService::~HttpService() {
    stop();
}

Engine & HttpService::engine() {
    return *impl_->engine;
}

int HttpService::start() {
    Impl & impl = *impl_;

    impl.server.Post("/completion", [&impl](const httplib::Request & req, httplib::Response & res) {
        impl.handle_completion(req, res);
    });
    impl.server.Get("/metrics", [&impl](const httplib::Request &, httplib::Response & res) {
        impl.handle_metrics(res);
    });
    impl.server.Get("/health", [&impl](const httplib::Request &, httplib::Response & res) {
        impl.handle_health(res);
    });

    if (impl.config.port == 0) {
        port_ = impl.server.bind_to_any_port(impl.config.host);
    } else {
        if (!impl.server.bind_to_port(impl.config.host, impl.config.port)) {
            throw IoError("cannot bind " + impl.config.host + ":" + std::to_string(impl.config.port));
        }
        port_ = impl.config.port;
    }
    if (port_ <= 0) {
        throw IoError("cannot bind " + impl.config.host);
    }

    impl.loop_thread   = std::thread([&impl] { impl.compute_loop(); });
    impl.server_thread = std::thread([&impl] { impl.server.listen_after_bind(); });
    impl.server.wait_until_ready();
    return port_;
}

void HttpService::stop() {
    if (!impl_ || impl_->stopping.exchange(true)) {
        return;
    }
    impl_->engine->shutdown();
    impl_->server.stop();
    impl_->wake_cv.notify_all();
    if (impl_->server_thread.joinable()) {
        impl_->server_thread.join();
    }
    if (impl_->loop_thread.joinable()) {
        impl_->loop_thread.join();
    }
}

}  // namespace loraserve
