#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <httplib.h>
#include <json.hpp>

#include "helpers.hpp"
#include "loraserve/http_service.hpp"

using namespace loraserve;
using nlohmann::json;
using test_helpers::TempDir;

namespace {

struct LiveService {
    TempDir     dir{"http"};
    HttpService service;
    int         port;

    LiveService() : service(make_config(dir)), port(service.start()) {}

    static ServiceConfig make_config(const TempDir & dir) {
        RegistryConfig reg;
        reg.root       = dir.file("registry");
        reg.count      = 6;
        reg.hidden_dim = 16;
        reg.rank       = 4;
        reg.num_layers = 2;
        reg.seed       = 3;
        generate_adapters(reg);

        ServiceConfig cfg;
        cfg.port             = 0;
        cfg.model.vocab_size = 32;
        cfg.model.hidden_dim = 16;
        cfg.model.num_layers = 2;
        cfg.model.eos_token  = 31;
        cfg.registry_path    = reg.root;
        cfg.engine.gamma     = 2;
        cfg.engine.cache_capacity = 3;
        return cfg;
    }

    httplib::Client client() {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(30, 0);
        return c;
    }
};

}  // namespace

TEST_CASE("completion with an explicit adapter id") {
    LiveService live;
    auto        client = live.client();

    const json body = {{"prompt", {1, 2, 3}}, {"adapter_id", 3}, {"n_predict", 4}};
    const auto res  = client.Post("/completion", body.dump(), "application/json");
    REQUIRE(res);
    REQUIRE(res->status == 200);

    const json out = json::parse(res->body);
    CHECK(out["adapter_used"] == 3);
    CHECK(out["selection_kind"] == "explicit");
    CHECK(out["tokens"].size() <= 4);
    CHECK(out["first_token_ms"].get<double>() >= 0.0);
    CHECK(out["total_ms"].get<double>() >= out["first_token_ms"].get<double>());
}

TEST_CASE("identical requests return identical tokens") {
    LiveService live;
    auto        client = live.client();

    const json body = {{"prompt", {4, 5, 6}}, {"adapter_id", 1}, {"n_predict", 5}};
    const auto r1   = client.Post("/completion", body.dump(), "application/json");
    const auto r2   = client.Post("/completion", body.dump(), "application/json");
    REQUIRE(r1);
    REQUIRE(r2);
    REQUIRE(r1->status == 200);
    REQUIRE(r2->status == 200);
    CHECK(json::parse(r1->body)["tokens"] == json::parse(r2->body)["tokens"]);
}

TEST_CASE("adaptive completion reports its selection kind") {
    LiveService live;
    auto        client = live.client();

    const json body = {{"prompt", {7, 8}}, {"n_predict", 3}};
    const auto res  = client.Post("/completion", body.dump(), "application/json");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    const std::string kind = json::parse(res->body)["selection_kind"];
    CHECK((kind == "cached_topk" || kind == "loaded_top1"));
}

TEST_CASE("text prompts go through the toy tokenizer") {
    LiveService live;
    auto        client = live.client();

    const json body = {{"prompt", "hello little server"}, {"adapter_id", 0}, {"n_predict", 2}};
    const auto res  = client.Post("/completion", body.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);

    const auto expected = tokenize_text("hello little server", 32);
    CHECK(int(expected.size()) == 3);
    for (int tok : expected) {
        CHECK(tok >= 0);
        CHECK(tok < 31);
    }
}

TEST_CASE("error statuses: 400 on malformed bodies, 404 on unknown adapters") {
    LiveService live;
    auto        client = live.client();

    auto res = client.Post("/completion", "{not json", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);

    res = client.Post("/completion", json{{"prompt", json::array()}}.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);

    res = client.Post("/completion", json{{"prompt", {1, 99}}}.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);

    res = client.Post("/completion", json{{"prompt", {1, 2}}, {"adapter_id", 77}}.dump(),
                      "application/json");
    REQUIRE(res);
    CHECK(res->status == 404);
}

TEST_CASE("metrics start zeroed and count completions monotonically") {
    LiveService live;
    auto        client = live.client();

    auto res = client.Get("/metrics");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    json m = json::parse(res->body);
    CHECK(m["completed"] == 0);
    CHECK(m["throughput_rps"] == 0.0);
    CHECK(m["cache_hit_rate"] == 0.0);

    const json body = {{"prompt", {1, 2}}, {"adapter_id", 0}, {"n_predict", 2}};
    REQUIRE(client.Post("/completion", body.dump(), "application/json"));

    res = client.Get("/metrics");
    REQUIRE(res);
    m = json::parse(res->body);
    CHECK(m["completed"] == 1);
    CHECK(m["avg_request_latency_s"].get<double>() > 0.0);

    REQUIRE(client.Post("/completion", body.dump(), "application/json"));
    res = client.Get("/metrics");
    REQUIRE(res);
    CHECK(json::parse(res->body)["completed"] == 2);
}

TEST_CASE("health reports slot occupancy") {
    LiveService live;
    auto        client = live.client();

    const auto res = client.Get("/health");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    const json h = json::parse(res->body);
    CHECK(h["status"] == "ok");
    CHECK(h["slots_idle"].get<int>() + h["slots_active"].get<int>() == 2);
}

TEST_CASE("service config file round trips through the loader") {
    TempDir dir("svc_cfg");
    {
        std::ofstream out(dir.file("svc.json"));
        out << R"({
  "host": "127.0.0.1",
  "port": 0,
  "registry": "some/registry",
  "router": "",
  "model": {"vocab_size": 32, "hidden_dim": 16, "num_layers": 2, "seed": 9},
  "engine": {"gamma": 3, "mode": "edgelora", "k": 2, "cache_capacity": 4, "slo_threshold_ms": 500}
})";
    }
    const ServiceConfig cfg = load_service_config(dir.file("svc.json"));
    CHECK(cfg.registry_path == "some/registry");
    CHECK(cfg.model.vocab_size == 32);
    CHECK(cfg.model.eos_token == 31);
    CHECK(cfg.engine.gamma == 3);
    CHECK(cfg.engine.selection.top_k == 2);
    CHECK(cfg.engine.slo_threshold_ms == 500.0);

    CHECK_THROWS_AS(load_service_config(dir.file("missing.json")), IoError);
}
