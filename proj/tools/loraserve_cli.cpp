#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include "loraserve/bench.hpp"
#include "loraserve/http_service.hpp"

using namespace loraserve;
using nlohmann::json;

namespace {

volatile std::sig_atomic_t g_interrupted = 0;

void on_signal(int) {
    g_interrupted = 1;
}

struct ModelFlags {
    int      vocab  = 128;
    int      dim    = 64;
    int      layers = 4;
    uint64_t seed   = 42;

    void attach(CLI::App * cmd) {
        cmd->add_option("--vocab", vocab, "vocab size");
        cmd->add_option("--dim", dim, "hidden dim");
        cmd->add_option("--layers", layers, "layer count");
        cmd->add_option("--model-seed", seed, "base model seed");
    }

    ToyModelConfig config() const { return ToyModelConfig{vocab, dim, layers, seed, vocab - 1}; }
};

int cmd_gen_adapters(const std::string & out, int n, int rank, uint64_t seed, const ModelFlags & model) {
    RegistryConfig cfg;
    cfg.root       = out;
    cfg.count      = n;
    cfg.hidden_dim = model.dim;
    cfg.rank       = rank;
    cfg.num_layers = model.layers;
    cfg.seed       = seed;
    generate_adapters(cfg);
    std::cout << "wrote " << n << " adapters to " << out << "\n";
    return 0;
}

int cmd_gen_trace(const WorkloadConfig & workload, const std::string & out) {
    const std::vector<TraceEvent> trace = generate_trace(workload);
    write_trace(out, trace);
    std::cout << "wrote " << trace.size() << " events to " << out << "\n";
    return 0;
}

int cmd_profile(const std::string & registry_path, const ModelFlags & model_flags, int datasets,
                int examples, int corpus_per_dataset, uint64_t seed, const std::string & out_profile,
                const std::string & out_corpus) {
    const AdapterRegistry registry = AdapterRegistry::open(registry_path);
    const ToyBaseModel    model    = build_model(model_flags.config());

    const int m = std::min(datasets, registry.count());
    const std::vector<EvalDataset> eval =
        make_topic_eval_datasets(model, registry, m, examples, 4, 10, derive_seed(seed, 0xE0A1));
    const ProfileMatrix profile = profile_adapters(model, registry, eval);

    json p = {{"datasets", profile.datasets}, {"adapters", profile.adapters}};
    for (int i = 0; i < profile.datasets; ++i) {
        json row = json::array();
        for (int j = 0; j < profile.adapters; ++j) {
            row.push_back(profile.at(i, j));
        }
        p["values"].push_back(row);
    }
    std::ofstream out(out_profile, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write profile: " + out_profile);
    }
    out << p.dump(2) << "\n";

    const std::vector<TrainSample> corpus = make_topic_corpus(
        m, corpus_per_dataset, 4, 10, model_flags.vocab, registry.count(), derive_seed(seed, 0xC0A1));
    write_corpus(out_corpus, corpus);
    std::cout << "profiled " << profile.adapters << " adapters on " << profile.datasets << " datasets -> "
              << out_profile << ", corpus -> " << out_corpus << "\n";
    return 0;
}

int cmd_train_router(const std::string & profile_path, const std::string & corpus_path, double epsilon,
                     const RouterTrainConfig & train, const std::string & out) {
    std::ifstream in(profile_path);
    if (!in) {
        throw IoError("cannot open profile: " + profile_path);
    }
    json p;
    try {
        in >> p;
    } catch (const json::exception & e) {
        throw FormatError(std::string("bad profile file: ") + e.what());
    }

    ProfileMatrix profile;
    profile.datasets = p.at("datasets").get<int>();
    profile.adapters = p.at("adapters").get<int>();
    for (const auto & row : p.at("values")) {
        for (const auto & v : row) {
            profile.values.push_back(v.get<double>());
        }
    }
    if (int(profile.values.size()) != profile.datasets * profile.adapters) {
        throw FormatError("profile matrix shape mismatch");
    }

    const std::vector<uint8_t>     labels = build_labels(profile, epsilon);
    const std::vector<TrainSample> corpus = read_corpus(corpus_path);
    const RouterModel model = train_router(corpus, labels, profile.datasets, profile.adapters, train);
    write_router_file(out, model);
    std::cout << "trained router (" << model.outputs << " outputs, F=" << model.feature_dim << ") -> " << out
              << "\n";
    return 0;
}

int cmd_serve(const ServiceConfig & config) {
    HttpService service(config);
    const int   port = service.start();
    std::cout << "serving on " << config.host << ":" << port << " (ctrl-c to stop)\n";
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_interrupted) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    service.stop();
    std::cout << "stopped\n";
    return 0;
}

int cmd_bench(const BenchConfig & config, const std::string & sweep_param,
              const std::vector<std::string> & sweep_values, const std::string & out) {
    std::vector<ReplayReport> reports;
    if (sweep_param.empty()) {
        reports.push_back(run_single(config));
    } else {
        reports = run_sweep(sweep_param, sweep_values, config);
    }
    render_report(reports, out);
    std::cout << render_table(reports);
    std::cout << "results -> " << out << " (table in " << out << ".txt)\n";
    return 0;
}

int cmd_report(const std::string & in) {
    const std::vector<ReplayReport> reports = read_report(in);
    std::cout << render_table(reports);
    return 0;
}

}  // namespace

int main(int argc, char ** argv) {
    CLI::App app{"multi-adapter LoRA serving testbed"};
    app.require_subcommand(1);

    // gen-adapters
    auto *      gen_adapters = app.add_subcommand("gen-adapters", "generate a seeded adapter registry");
    std::string ga_out;
    int         ga_n    = 20;
    int         ga_rank = 8;
    uint64_t    ga_seed = 7;
    ModelFlags  ga_model;
    gen_adapters->add_option("-o,--out", ga_out, "registry directory")->required();
    gen_adapters->add_option("--n", ga_n, "adapter count");
    gen_adapters->add_option("--rank", ga_rank, "adapter rank");
    gen_adapters->add_option("--seed", ga_seed, "registry seed");
    ga_model.attach(gen_adapters);

    // gen-trace
    auto *         gen_trace = app.add_subcommand("gen-trace", "generate a synthetic workload trace");
    WorkloadConfig wl;
    std::string    gt_out;
    gen_trace->add_option("-o,--out", gt_out, "trace file")->required();
    gen_trace->add_option("--n", wl.n, "adapter count");
    gen_trace->add_option("--alpha", wl.alpha, "power-law exponent");
    gen_trace->add_option("--rate", wl.rate, "requests per second");
    gen_trace->add_option("--cv", wl.cv, "inter-arrival coefficient of variation");
    gen_trace->add_option("--duration", wl.duration_s, "arrival window in seconds");
    gen_trace->add_option("--il", wl.input_min, "min prompt tokens");
    gen_trace->add_option("--iu", wl.input_max, "max prompt tokens");
    gen_trace->add_option("--ol", wl.output_min, "min output tokens");
    gen_trace->add_option("--ou", wl.output_max, "max output tokens");
    gen_trace->add_option("--explicit-frac", wl.explicit_fraction, "share of requests naming their adapter");
    gen_trace->add_option("--seed", wl.seed, "trace seed");
    gen_trace->add_option("--vocab", wl.vocab_size, "vocab size");

    // profile
    auto *      profile = app.add_subcommand("profile", "profile adapters and emit a training corpus");
    std::string pf_registry, pf_out_profile = "profile.json", pf_out_corpus = "corpus.txt";
    int         pf_datasets = 16, pf_examples = 6, pf_corpus = 40;
    uint64_t    pf_seed = 1;
    ModelFlags  pf_model;
    profile->add_option("--registry", pf_registry, "registry directory")->required();
    profile->add_option("--datasets", pf_datasets, "dataset count (capped at adapter count)");
    profile->add_option("--examples", pf_examples, "examples per dataset");
    profile->add_option("--corpus-per-dataset", pf_corpus, "training prompts per dataset");
    profile->add_option("--seed", pf_seed, "profiling seed");
    profile->add_option("--out-profile", pf_out_profile, "profile matrix output");
    profile->add_option("--out-corpus", pf_out_corpus, "training corpus output");
    pf_model.attach(profile);

    // train-router
    auto *            train = app.add_subcommand("train-router", "train the adapter scorer");
    std::string       tr_profile = "profile.json", tr_corpus = "corpus.txt", tr_out = "router.bin";
    double            tr_epsilon = 0.05;
    RouterTrainConfig tr_cfg;
    train->add_option("--profile", tr_profile, "profile matrix file");
    train->add_option("--corpus", tr_corpus, "training corpus file");
    train->add_option("--epsilon", tr_epsilon, "labeling tolerance");
    train->add_option("--epochs", tr_cfg.epochs, "training epochs");
    train->add_option("--lr", tr_cfg.learning_rate, "learning rate");
    train->add_option("--feature-dim", tr_cfg.feature_dim, "hashed feature dimension");
    train->add_option("--seed", tr_cfg.seed, "init seed");
    train->add_option("-o,--out", tr_out, "router model output");

    // serve
    auto *        serve = app.add_subcommand("serve", "run the HTTP service");
    std::string   sv_config_path;
    ServiceConfig sv;
    ModelFlags    sv_model;
    serve->add_option("--config", sv_config_path, "service config json (flags override)");
    serve->add_option("--host", sv.host, "listen host");
    serve->add_option("--port", sv.port, "listen port");
    auto * sv_registry_opt = serve->add_option("--registry", sv.registry_path, "registry directory");
    serve->add_option("--router", sv.router_path, "router model file");
    serve->add_option("--gamma", sv.engine.gamma, "slot count");
    serve->add_option("--k", sv.engine.selection.top_k, "selection top-k");
    serve->add_option("--cache-capacity", sv.engine.cache_capacity, "resident adapter budget");
    serve->add_option("--slo-ms", sv.engine.slo_threshold_ms, "SLO threshold (ms)");
    sv_model.attach(serve);

    // bench
    auto *      bench = app.add_subcommand("bench", "replay a synthetic workload and report metrics");
    BenchConfig bc;
    std::string bn_out = "results.jsonl";
    std::string bn_mode = "edgelora";
    std::string bn_sweep_param;
    std::vector<std::string> bn_sweep_values;
    ModelFlags  bn_model;
    bench->add_option("--mode", bn_mode, "edgelora or sequential_baseline");
    bench->add_option("--n", bc.workload.n, "adapter count");
    bench->add_option("--alpha", bc.workload.alpha, "power-law exponent");
    bench->add_option("--rate", bc.workload.rate, "requests per second");
    bench->add_option("--cv", bc.workload.cv, "inter-arrival cv");
    bench->add_option("--duration", bc.workload.duration_s, "arrival window (s)");
    bench->add_option("--il", bc.workload.input_min, "min prompt tokens");
    bench->add_option("--iu", bc.workload.input_max, "max prompt tokens");
    bench->add_option("--ol", bc.workload.output_min, "min output tokens");
    bench->add_option("--ou", bc.workload.output_max, "max output tokens");
    bench->add_option("--explicit-frac", bc.workload.explicit_fraction, "explicit adapter share");
    bench->add_option("--seed", bc.workload.seed, "workload seed");
    bench->add_option("--gamma", bc.engine.gamma, "slot count");
    bench->add_option("--k", bc.engine.selection.top_k, "selection top-k");
    bench->add_option("--cache-capacity", bc.engine.cache_capacity, "resident adapter budget (l)");
    bench->add_option("--budget", bc.engine.memory_budget_adapters, "baseline preload budget");
    bench->add_option("--slo-ms", bc.engine.slo_threshold_ms, "SLO threshold (ms)");
    bench->add_option("--rank", bc.adapter_rank, "adapter rank");
    bench->add_flag("--no-adaptive,!--adaptive", [&bc](int64_t count) { bc.adaptive = count == 0; },
                    "disable the router; requests carry explicit adapters")
        ->default_val(false);
    bench->add_option("--router-epochs", bc.router.train.epochs, "router training epochs");
    bench->add_option("--workdir", bc.workdir, "scratch directory for registries");
    bench->add_option("--sweep-param", bn_sweep_param, "parameter to sweep (n alpha cv gamma l k mode)");
    bench->add_option("--sweep-values", bn_sweep_values, "values for the swept parameter");
    bench->add_option("-o,--out", bn_out, "results file (jsonl)");
    bn_model.attach(bench);

    // report
    auto *      report = app.add_subcommand("report", "render a results file as a table");
    std::string rp_in;
    report->add_option("-i,--in", rp_in, "results file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen_adapters->parsed()) {
            return cmd_gen_adapters(ga_out, ga_n, ga_rank, ga_seed, ga_model);
        }
        if (gen_trace->parsed()) {
            return cmd_gen_trace(wl, gt_out);
        }
        if (profile->parsed()) {
            return cmd_profile(pf_registry, pf_model, pf_datasets, pf_examples, pf_corpus, pf_seed,
                               pf_out_profile, pf_out_corpus);
        }
        if (train->parsed()) {
            return cmd_train_router(tr_profile, tr_corpus, tr_epsilon, tr_cfg, tr_out);
        }
        if (serve->parsed()) {
            ServiceConfig cfg = sv;
            if (!sv_config_path.empty()) {
                cfg = load_service_config(sv_config_path);
                // explicit flags win over the file
                if (*sv_registry_opt) {
                    cfg.registry_path = sv.registry_path;
                }
            } else {
                cfg.model = sv_model.config();
            }
            if (cfg.registry_path.empty()) {
                std::cerr << "serve needs --registry or a config file\n";
                return 1;
            }
            return cmd_serve(cfg);
        }
        if (bench->parsed()) {
            bc.engine.mode        = engine_mode_from_string(bn_mode);
            bc.model              = bn_model.config();
            bc.workload.vocab_size = bc.model.vocab_size;
            return cmd_bench(bc, bn_sweep_param, bn_sweep_values, bn_out);
        }
        if (report->parsed()) {
            return cmd_report(rp_in);
        }
    } catch (const ConfigError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const InputError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const FormatError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception & e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
