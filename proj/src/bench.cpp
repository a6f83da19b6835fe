#include "loraserve/bench.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace loraserve {

MetricsReport compute_metrics(const std::vector<CompletionRecord> & records, double slo_threshold_ms,
                              double trace_duration_s) {
    if (records.empty()) {
        throw InputError("metrics are undefined without records");
    }
    if (trace_duration_s <= 0.0) {
        throw InputError("trace duration must be positive");
    }

    MetricsReport report;
    double        latency_sum = 0.0;
    double        first_sum   = 0.0;
    long          within_slo  = 0;
    for (const CompletionRecord & rec : records) {
        if (rec.failed) {
            continue;
        }
        ++report.completed;
        latency_sum += rec.completion_ms - rec.arrival_ms;
        const double first = rec.first_token_ms - rec.arrival_ms;
        first_sum += first;
        if (first <= slo_threshold_ms) {
            ++within_slo;
        }
    }
    if (report.completed == 0) {
        throw InputError("metrics are undefined without completed records");
    }
    report.throughput_rps            = double(report.completed) / trace_duration_s;
    report.avg_request_latency_s     = latency_sum / double(report.completed) / 1000.0;
    report.avg_first_token_latency_s = first_sum / double(report.completed) / 1000.0;
    report.slo_attainment            = double(within_slo) / double(report.completed);
    return report;
}

RouterModel build_router(const ToyBaseModel & model, const AdapterRegistry & registry,
                         const RouterPipelineConfig & config) {
    const int m = std::min(config.dataset_cap, registry.count());

    const std::vector<EvalDataset> datasets = make_topic_eval_datasets(
        model, registry, m, config.examples_per_dataset, config.prompt_min, config.prompt_max,
        derive_seed(config.train.seed, 0xE0A1));
    const ProfileMatrix        profile = profile_adapters(model, registry, datasets);
    const std::vector<uint8_t> labels  = build_labels(profile, config.epsilon);

    const std::vector<TrainSample> corpus =
        make_topic_corpus(m, config.corpus_per_dataset, config.prompt_min, config.prompt_max,
                          model.config.vocab_size, registry.count(), derive_seed(config.train.seed, 0xC0A1));
    return train_router(corpus, labels, m, registry.count(), config.train);
}

ReplayReport replay(const std::vector<TraceEvent> & trace, const ToyBaseModel & model,
                    const AdapterRegistry & registry, const RouterModel & router,
                    const EngineConfig & engine_config) {
    ReplayReport report;
    try {
        Engine engine(model, registry, router, engine_config);
        report.records = engine.run_until_drain(trace);
        report.metrics.cache_hit_rate = engine.cache_hit_rate();
    } catch (const CapacityError &) {
        report.oom = true;
        return report;
    }

    if (!report.records.empty()) {
        // the replayed timeline runs from t=0 to the last completion
        report.duration_s = report.records.back().completion_ms / 1000.0;
        bool any_ok       = false;
        for (const CompletionRecord & rec : report.records) {
            any_ok = any_ok || !rec.failed;
        }
        if (any_ok && report.duration_s > 0.0) {
            const double hit_rate  = report.metrics.cache_hit_rate;
            report.metrics         = compute_metrics(report.records, engine_config.slo_threshold_ms,
                                                     report.duration_s);
            report.metrics.cache_hit_rate = hit_rate;
            report.defined                = true;
        }
    }
    return report;
}

AdapterRegistry materialize_registry(const std::string & workdir, int count, const ToyModelConfig & model,
                                     int rank, uint64_t seed) {
    char name[128];
    std::snprintf(name, sizeof(name), "reg_n%d_d%d_r%d_L%d_s%llu", count, model.hidden_dim, rank,
                  model.num_layers, static_cast<unsigned long long>(seed));
    const std::string root = (fs::path(workdir) / name).string();
    if (fs::exists(fs::path(root) / "manifest.json")) {
        try {
            AdapterRegistry existing = AdapterRegistry::open(root);
            if (existing.count() == count && existing.hidden_dim() == model.hidden_dim &&
                existing.rank() == rank && existing.num_layers() == model.num_layers &&
                existing.seed() == seed) {
                return existing;
            }
        } catch (const std::exception &) {
            // fall through and regenerate
        }
    }
    RegistryConfig config;
    config.root       = root;
    config.count      = count;
    config.hidden_dim = model.hidden_dim;
    config.rank       = rank;
    config.num_layers = model.num_layers;
    config.seed       = seed;
    return generate_adapters(config);
}

static nlohmann::json echo_config(const BenchConfig & config) {
    return nlohmann::json{
        {"mode", to_string(config.engine.mode)},
        {"adaptive", config.adaptive},
        {"n", config.workload.n},
        {"alpha", config.workload.alpha},
        {"rate", config.workload.rate},
        {"cv", config.workload.cv},
        {"duration_s", config.workload.duration_s},
        {"input_bounds", {config.workload.input_min, config.workload.input_max}},
        {"output_bounds", {config.workload.output_min, config.workload.output_max}},
        {"explicit_fraction", config.workload.explicit_fraction},
        {"gamma", config.engine.gamma},
        {"k", config.engine.selection.top_k},
        {"cache_capacity", config.engine.cache_capacity},
        {"memory_budget_adapters", config.engine.memory_budget_adapters},
        {"slo_threshold_ms", config.engine.slo_threshold_ms},
        {"vocab_size", config.model.vocab_size},
        {"hidden_dim", config.model.hidden_dim},
        {"num_layers", config.model.num_layers},
        {"adapter_rank", config.adapter_rank},
        {"model_seed", config.model.seed},
    };
}

ReplayReport run_single(const BenchConfig & config) {
    BenchConfig cfg = config;
    cfg.workload.vocab_size = cfg.model.vocab_size;
    if (!cfg.adaptive) {
        cfg.workload.explicit_fraction = 1.0;
    }

    const ToyBaseModel    model    = build_model(cfg.model);
    const AdapterRegistry registry = materialize_registry(cfg.workdir, cfg.workload.n, cfg.model,
                                                          cfg.adapter_rank, derive_seed(cfg.workload.seed, 0xAD));

    RouterModel router;
    if (cfg.adaptive && cfg.engine.mode == EngineMode::EdgeLora) {
        router = build_router(model, registry, cfg.router);
    } else {
        router = init_router(cfg.router.train.feature_dim, registry.count(), cfg.router.train.seed);
    }

    const std::vector<TraceEvent> trace = generate_trace(cfg.workload);

    ReplayReport report = replay(trace, model, registry, router, cfg.engine);
    report.config_echo  = echo_config(cfg);
    report.seed         = cfg.workload.seed;
    return report;
}

std::vector<ReplayReport> run_sweep(const std::string & param, const std::vector<std::string> & values,
                                    const BenchConfig & base) {
    if (values.empty()) {
        throw ConfigError("sweep needs at least one value");
    }
    std::vector<ReplayReport> reports;
    reports.reserve(values.size());
    for (const std::string & value : values) {
        BenchConfig cfg = base;
        try {
            if (param == "n") {
                cfg.workload.n = std::stoi(value);
            } else if (param == "alpha") {
                cfg.workload.alpha = std::stod(value);
            } else if (param == "cv") {
                cfg.workload.cv = std::stod(value);
            } else if (param == "gamma") {
                cfg.engine.gamma = std::stoi(value);
            } else if (param == "l") {
                cfg.engine.cache_capacity = std::stoi(value);
            } else if (param == "k") {
                cfg.engine.selection.top_k = std::stoi(value);
            } else if (param == "mode") {
                cfg.engine.mode = engine_mode_from_string(value);
            } else {
                throw ConfigError("unknown sweep parameter: " + param);
            }
        } catch (const ConfigError &) {
            throw;
        } catch (const std::exception &) {
            throw ConfigError("bad sweep value '" + value + "' for parameter " + param);
        }
        ReplayReport report           = run_single(cfg);
        report.config_echo["swept"]   = param;
        report.config_echo["value"]   = value;
        reports.push_back(std::move(report));
    }
    return reports;
}

static std::string fmt(double v, const char * format = "%.4f") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), format, v);
    return buf;
}

std::string render_table(const std::vector<ReplayReport> & reports) {
    const std::vector<std::string> headers = {"mode",   "n",       "alpha",    "cv",       "gamma",
                                              "l",      "k",       "tput_rps", "avg_lat_s", "first_tok_s",
                                              "slo",    "hit_rate", "completed"};

    std::vector<std::vector<std::string>> rows;
    for (const ReplayReport & r : reports) {
        const nlohmann::json &   c = r.config_echo;
        std::vector<std::string> row;
        row.push_back(c.value("mode", std::string("?")));
        row.push_back(std::to_string(c.value("n", 0)));
        row.push_back(fmt(c.value("alpha", 0.0), "%.2f"));
        row.push_back(fmt(c.value("cv", 0.0), "%.2f"));
        row.push_back(std::to_string(c.value("gamma", 0)));
        row.push_back(std::to_string(c.value("cache_capacity", 0)));
        row.push_back(std::to_string(c.value("k", 0)));
        if (r.oom) {
            row.insert(row.end(), {"OOM", "OOM", "OOM", "OOM", "OOM", "OOM"});
        } else if (!r.defined) {
            row.insert(row.end(), {"-", "-", "-", "-", "-", "0"});
        } else {
            row.push_back(fmt(r.metrics.throughput_rps));
            row.push_back(fmt(r.metrics.avg_request_latency_s));
            row.push_back(fmt(r.metrics.avg_first_token_latency_s));
            row.push_back(fmt(r.metrics.slo_attainment));
            row.push_back(fmt(r.metrics.cache_hit_rate));
            row.push_back(std::to_string(r.metrics.completed));
        }
        rows.push_back(std::move(row));
    }

    std::vector<size_t> widths(headers.size());
    for (size_t i = 0; i < headers.size(); ++i) {
        widths[i] = headers[i].size();
        for (const auto & row : rows) {
            widths[i] = std::max(widths[i], row[i].size());
        }
    }
    std::ostringstream out;
    auto emit_row = [&](const std::vector<std::string> & row) {
        for (size_t i = 0; i < row.size(); ++i) {
            out << (i == 0 ? "" : "  ");
            out << row[i] << std::string(widths[i] - row[i].size(), ' ');
        }
        out << '\n';
    };
    emit_row(headers);
    for (const auto & row : rows) {
        emit_row(row);
    }
    return out.str();
}

static nlohmann::json metrics_to_json(const MetricsReport & m) {
    return nlohmann::json{
        {"completed", m.completed},
        {"throughput_rps", m.throughput_rps},
        {"avg_request_latency_s", m.avg_request_latency_s},
        {"avg_first_token_latency_s", m.avg_first_token_latency_s},
        {"slo_attainment", m.slo_attainment},
        {"cache_hit_rate", m.cache_hit_rate},
    };
}

static MetricsReport metrics_from_json(const nlohmann::json & j) {
    MetricsReport m;
    m.completed                 = j.at("completed").get<long>();
    m.throughput_rps            = j.at("throughput_rps").get<double>();
    m.avg_request_latency_s     = j.at("avg_request_latency_s").get<double>();
    m.avg_first_token_latency_s = j.at("avg_first_token_latency_s").get<double>();
    m.slo_attainment            = j.at("slo_attainment").get<double>();
    m.cache_hit_rate            = j.at("cache_hit_rate").get<double>();
    return m;
}

void render_report(const std::vector<ReplayReport> & reports, const std::string & path) {
    if (reports.empty()) {
        throw InputError("nothing to render");
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write results file: " + path);
    }
    for (const ReplayReport & r : reports) {
        nlohmann::json j = {
            {"config", r.config_echo},
            {"seed", r.seed},
            {"oom", r.oom},
            {"defined", r.defined},
            {"duration_s", r.duration_s},
        };
        j["metrics"] = r.oom || !r.defined ? nlohmann::json(nullptr) : metrics_to_json(r.metrics);
        out << j.dump() << '\n';
    }
    if (!out) {
        throw IoError("short write: " + path);
    }

    std::ofstream table(path + ".txt", std::ios::trunc);
    if (!table) {
        throw IoError("cannot write table file: " + path + ".txt");
    }
    table << render_table(reports);
}

std::vector<ReplayReport> read_report(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open results file: " + path);
    }
    std::vector<ReplayReport> reports;
    std::string               line;
    int                       line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            const nlohmann::json j = nlohmann::json::parse(line);
            ReplayReport         r;
            r.config_echo = j.at("config");
            r.seed        = j.at("seed").get<uint64_t>();
            r.oom         = j.at("oom").get<bool>();
            r.defined     = j.at("defined").get<bool>();
            r.duration_s  = j.at("duration_s").get<double>();
            if (!j.at("metrics").is_null()) {
                r.metrics = metrics_from_json(j.at("metrics"));
            }
            reports.push_back(std::move(r));
        } catch (const nlohmann::json::exception & e) {
            throw FormatError("bad results record at " + path + ":" + std::to_string(line_no) + ": " +
                              e.what());
        }
    }
    return reports;
}

}  // namespace loraserve
