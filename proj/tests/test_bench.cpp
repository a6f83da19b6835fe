#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "loraserve/bench.hpp"

using namespace loraserve;
using test_helpers::TempDir;

namespace {

CompletionRecord record(double arrival_s, double first_s, double done_s) {
    CompletionRecord rec;
    rec.request_id     = 0;
    rec.arrival_ms     = arrival_s * 1000.0;
    rec.first_token_ms = first_s * 1000.0;
    rec.completion_ms  = done_s * 1000.0;
    return rec;
}

BenchConfig small_bench(const TempDir & dir) {
    BenchConfig cfg;
    cfg.model.vocab_size = 32;
    cfg.model.hidden_dim = 16;
    cfg.model.num_layers = 2;
    cfg.model.eos_token  = 31;
    cfg.adapter_rank     = 4;

    cfg.workload.n          = 6;
    cfg.workload.rate       = 4.0;
    cfg.workload.duration_s = 5.0;
    cfg.workload.input_min  = 2;
    cfg.workload.input_max  = 5;
    cfg.workload.output_min = 1;
    cfg.workload.output_max = 4;
    cfg.workload.seed       = 11;

    cfg.engine.gamma          = 3;
    cfg.engine.cache_capacity = 3;

    cfg.router.dataset_cap          = 4;
    cfg.router.examples_per_dataset = 3;
    cfg.router.corpus_per_dataset   = 10;
    cfg.router.train.epochs         = 40;
    cfg.router.train.feature_dim    = 64;

    cfg.workdir = dir.file("work");
    return cfg;
}

}  // namespace

TEST_CASE("metric formulas on hand-built records") {
    SUBCASE("throughput: 3 completions over a 10 second trace") {
        const std::vector<CompletionRecord> records = {record(0, 1, 2), record(1, 2, 3), record(2, 3, 4)};
        const MetricsReport m = compute_metrics(records, 6000.0, 10.0);
        CHECK(m.throughput_rps == doctest::Approx(0.3));
        CHECK(m.completed == 3);
    }
    SUBCASE("slo attainment: first-token latencies {1,2,10}s against 6s") {
        const std::vector<CompletionRecord> records = {record(0, 1, 11), record(0, 2, 11), record(0, 10, 11)};
        const MetricsReport m = compute_metrics(records, 6000.0, 11.0);
        CHECK(m.slo_attainment == doctest::Approx(2.0 / 3.0));
    }
    SUBCASE("latency averages") {
        const std::vector<CompletionRecord> records = {record(0, 1, 4)};
        const MetricsReport m = compute_metrics(records, 6000.0, 4.0);
        CHECK(m.avg_request_latency_s == doctest::Approx(4.0));
        CHECK(m.avg_first_token_latency_s == doctest::Approx(1.0));
    }
    SUBCASE("empty or failed-only records are undefined") {
        CHECK_THROWS_AS(compute_metrics({}, 6000.0, 1.0), InputError);
        CompletionRecord failed = record(0, 1, 2);
        failed.failed           = true;
        CHECK_THROWS_AS(compute_metrics({failed}, 6000.0, 1.0), InputError);
    }
}

TEST_CASE("slo attainment is monotone in the threshold") {
    Rng                           rng(31);
    std::vector<CompletionRecord> records;
    for (int i = 0; i < 50; ++i) {
        const double arrival = rng.uniform(0.0, 10.0);
        const double first   = arrival + rng.uniform(0.1, 8.0);
        records.push_back(record(arrival, first, first + rng.uniform(0.1, 4.0)));
    }
    double prev = -1.0;
    for (double threshold_s : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
        const MetricsReport m = compute_metrics(records, threshold_s * 1000.0, 20.0);
        CHECK(m.slo_attainment >= prev);
        prev = m.slo_attainment;
    }
    CHECK(prev == doctest::Approx(1.0));
}

TEST_CASE("replay completes every trace event") {
    TempDir     dir("bench_replay");
    BenchConfig cfg = small_bench(dir);
    cfg.adaptive    = false;

    const ReplayReport report = run_single(cfg);
    REQUIRE(report.defined);
    CHECK_FALSE(report.oom);
    CHECK(report.metrics.completed > 0);
    CHECK(size_t(report.metrics.completed) == report.records.size());
    CHECK(report.duration_s > 0.0);
    CHECK(report.metrics.throughput_rps ==
          doctest::Approx(double(report.metrics.completed) / report.duration_s));
}

TEST_CASE("an empty trace yields an undefined-metrics report") {
    TempDir     dir("bench_empty");
    BenchConfig cfg          = small_bench(dir);
    cfg.adaptive             = false;
    cfg.workload.duration_s  = 0.0;

    const ReplayReport report = run_single(cfg);
    CHECK_FALSE(report.defined);
    CHECK_FALSE(report.oom);
    CHECK(report.records.empty());
}

TEST_CASE("baseline over budget reports OOM instead of crashing") {
    TempDir     dir("bench_oom");
    BenchConfig cfg                    = small_bench(dir);
    cfg.adaptive                       = false;
    cfg.workload.n                     = 6;
    cfg.engine.mode                    = EngineMode::SequentialBaseline;
    cfg.engine.memory_budget_adapters  = 3;

    const ReplayReport report = run_single(cfg);
    CHECK(report.oom);
    CHECK_FALSE(report.defined);
}

TEST_CASE("mode sweep: edgelora beats the baseline on a mixed trace") {
    TempDir     dir("bench_modes");
    BenchConfig cfg = small_bench(dir);
    cfg.adaptive    = false;
    cfg.adapter_rank = 8;
    cfg.model.hidden_dim = 24;
    cfg.workload.n       = 8;
    cfg.workload.rate    = 50.0;  // saturating burst
    cfg.workload.duration_s = 2.0;
    cfg.engine.gamma     = 6;
    cfg.engine.cache_capacity = 6;

    const auto reports = run_sweep("mode", {"edgelora", "sequential_baseline"}, cfg);
    REQUIRE(reports.size() == 2);
    REQUIRE(reports[0].defined);
    REQUIRE(reports[1].defined);
    CHECK(reports[0].metrics.throughput_rps > reports[1].metrics.throughput_rps);
}

TEST_CASE("gamma sweep throughput is non-decreasing") {
    TempDir     dir("bench_gamma");
    BenchConfig cfg = small_bench(dir);
    cfg.adaptive    = false;
    cfg.workload.rate       = 20.0;
    cfg.workload.duration_s = 3.0;

    const auto reports = run_sweep("gamma", {"1", "2", "4"}, cfg);
    REQUIRE(reports.size() == 3);
    for (size_t i = 1; i < reports.size(); ++i) {
        REQUIRE(reports[i].defined);
        CHECK(reports[i].metrics.throughput_rps >= reports[i - 1].metrics.throughput_rps * 0.99);
    }
}

TEST_CASE("sweeps share arrival draws where the parameter permits") {
    TempDir     dir("bench_pair");
    BenchConfig cfg = small_bench(dir);
    cfg.adaptive    = false;

    const auto reports = run_sweep("alpha", {"0.5", "1.5"}, cfg);
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].metrics.completed == reports[1].metrics.completed);
}

TEST_CASE("unknown sweep parameters and bad values are config errors") {
    TempDir     dir("bench_badsweep");
    BenchConfig cfg = small_bench(dir);
    CHECK_THROWS_AS(run_sweep("nope", {"1"}, cfg), ConfigError);
    CHECK_THROWS_AS(run_sweep("gamma", {"abc"}, cfg), ConfigError);
    CHECK_THROWS_AS(run_sweep("gamma", {}, cfg), ConfigError);
}

TEST_CASE("results file round trip and table rendering") {
    TempDir     dir("bench_render");
    BenchConfig cfg = small_bench(dir);
    cfg.adaptive    = false;

    std::vector<ReplayReport> reports;
    reports.push_back(run_single(cfg));

    ReplayReport oom;
    oom.oom                   = true;
    oom.config_echo           = reports[0].config_echo;
    oom.config_echo["mode"]   = "sequential_baseline";
    oom.seed                  = 3;
    reports.push_back(oom);

    const std::string path = dir.file("results.jsonl");
    render_report(reports, path);

    const auto loaded = read_report(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].defined);
    CHECK(loaded[0].seed == reports[0].seed);
    CHECK(loaded[0].metrics.throughput_rps == reports[0].metrics.throughput_rps);
    CHECK(loaded[0].metrics.cache_hit_rate == reports[0].metrics.cache_hit_rate);
    CHECK(loaded[0].config_echo == reports[0].config_echo);
    CHECK(loaded[1].oom);

    const std::string table = render_table(loaded);
    CHECK(table.find("OOM") != std::string::npos);
    CHECK(table.find("tput_rps") != std::string::npos);

    // single-row table still renders
    const std::string single = render_table({loaded[0]});
    CHECK(single.find("edgelora") != std::string::npos);
}

TEST_CASE("adaptive replays route by topic and report a hit rate") {
    TempDir     dir("bench_adaptive");
    BenchConfig cfg   = small_bench(dir);
    cfg.adaptive      = true;
    cfg.workload.alpha = 1.0;

    const ReplayReport report = run_single(cfg);
    REQUIRE(report.defined);
    CHECK(report.metrics.cache_hit_rate >= 0.0);
    CHECK(report.metrics.cache_hit_rate <= 1.0);
    for (const CompletionRecord & rec : report.records) {
        CHECK_FALSE(rec.failed);
        CHECK(rec.selection_kind != SelectionKind::Explicit);
    }
}
