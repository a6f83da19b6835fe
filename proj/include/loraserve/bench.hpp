#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "loraserve/engine.hpp"

namespace loraserve {

struct MetricsReport {
    long   completed                = 0;
    double throughput_rps           = 0.0;
    double avg_request_latency_s    = 0.0;
    double avg_first_token_latency_s = 0.0;
    double slo_attainment           = 0.0;
    double cache_hit_rate           = 0.0;
};

// throughput = completed / duration; latencies averaged over completed
// requests; SLO attainment = share whose first token beat the threshold.
// Failed records count toward nothing but are tolerated in the input.
MetricsReport compute_metrics(const std::vector<CompletionRecord> & records, double slo_threshold_ms,
                              double trace_duration_s);

// How the router is produced for adaptive replays: profile the most popular
// dataset_cap topics against every adapter, label within epsilon of each
// row's best, then fit the scorer on fresh topic prompts.
struct RouterPipelineConfig {
    int               dataset_cap          = 16;
    int               examples_per_dataset = 6;
    int               corpus_per_dataset   = 40;
    int               prompt_min           = 4;
    int               prompt_max           = 10;
    double            epsilon              = 0.05;
    RouterTrainConfig train;
};

RouterModel build_router(const ToyBaseModel & model, const AdapterRegistry & registry,
                         const RouterPipelineConfig & config);

struct BenchConfig {
    ToyModelConfig       model;
    int                  adapter_rank = 8;
    WorkloadConfig       workload;
    EngineConfig         engine;
    RouterPipelineConfig router;
    bool                 adaptive = true;  // train and use a router; otherwise requests go explicit
    std::string          workdir  = "bench-work";
};

struct ReplayReport {
    nlohmann::json                config_echo;
    uint64_t                      seed    = 0;
    bool                          oom     = false;
    bool                          defined = false;
    MetricsReport                 metrics;
    double                        duration_s = 0.0;
    std::vector<CompletionRecord> records;
};

// Builds the engine (prefilled cache), drains the trace, and computes metrics
// over the replayed timeline. A baseline over its memory budget yields an
// OOM-marked report instead of throwing.
ReplayReport replay(const std::vector<TraceEvent> & trace, const ToyBaseModel & model,
                    const AdapterRegistry & registry, const RouterModel & router, const EngineConfig & engine);

// Materializes registry/router/trace under workdir and replays once.
ReplayReport run_single(const BenchConfig & config);

// One replay per value; the shared workload seed keeps arrival draws aligned
// wherever the swept parameter allows. param is one of n, alpha, cv, gamma,
// l, k, mode.
std::vector<ReplayReport> run_sweep(const std::string & param, const std::vector<std::string> & values,
                                    const BenchConfig & base);

std::string               render_table(const std::vector<ReplayReport> & reports);
void                      render_report(const std::vector<ReplayReport> & reports, const std::string & path);
std::vector<ReplayReport> read_report(const std::string & path);

// Registry shared by bench runs, created on first use and reused when the
// parameters already match.
AdapterRegistry materialize_registry(const std::string & workdir, int count, const ToyModelConfig & model,
                                     int rank, uint64_t seed);

}  // namespace loraserve
