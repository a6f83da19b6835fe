#include "loraserve/router.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "loraserve/rng.hpp"
#include "loraserve/workload.hpp"

namespace loraserve {

static size_t feature_bucket(int token, int feature_dim) {
    const uint64_t h = uint64_t(uint32_t(token)) * 0x9E3779B97F4A7C15ull;
    return size_t((h >> 33) % uint64_t(feature_dim));
}

std::vector<double> featurize(const std::vector<int> & prompt, int feature_dim) {
    if (prompt.empty()) {
        throw InputError("cannot featurize an empty prompt");
    }
    if (feature_dim < 1) {
        throw ConfigError("feature_dim must be >= 1");
    }
    std::vector<double> features(size_t(feature_dim), 0.0);
    for (int tok : prompt) {
        features[feature_bucket(tok, feature_dim)] += 1.0;
    }
    const double total = double(prompt.size());
    for (double & f : features) {
        f /= total;
    }
    return features;
}

ProfileMatrix profile_adapters(const ToyBaseModel & model, const AdapterRegistry & registry,
                               const std::vector<EvalDataset> & datasets) {
    if (datasets.empty()) {
        throw InputError("profiling needs at least one dataset");
    }
    ProfileMatrix profile;
    profile.datasets = int(datasets.size());
    profile.adapters = registry.count();
    profile.values.assign(size_t(profile.datasets) * size_t(profile.adapters), 0.0);

    for (int j = 0; j < registry.count(); ++j) {
        const FullAdapter adapter = registry.load(j);
        for (int i = 0; i < profile.datasets; ++i) {
            const EvalDataset & ds = datasets[size_t(i)];
            if (ds.examples.empty()) {
                throw InputError("dataset " + std::to_string(ds.id) + " is empty");
            }
            int correct = 0;
            for (const EvalExample & ex : ds.examples) {
                const DecodeState state   = process_prompt(model, &adapter, ex.prompt);
                const auto [predicted, _] = decode_step(model, &adapter, state);
                if (predicted == ex.expected) {
                    ++correct;
                }
            }
            profile.at(i, j) = double(correct) / double(ds.examples.size());
        }
    }
    return profile;
}

std::vector<uint8_t> build_labels(const ProfileMatrix & profile, double epsilon) {
    if (epsilon < 0.0) {
        throw ConfigError("epsilon must be >= 0");
    }
    std::vector<uint8_t> labels(profile.values.size(), 0);
    for (int i = 0; i < profile.datasets; ++i) {
        double best = 0.0;
        for (int j = 0; j < profile.adapters; ++j) {
            best = std::max(best, profile.at(i, j));
        }
        for (int j = 0; j < profile.adapters; ++j) {
            if (profile.at(i, j) >= best - epsilon) {
                labels[size_t(i) * size_t(profile.adapters) + size_t(j)] = 1;
            }
        }
    }
    return labels;
}

RouterModel init_router(int feature_dim, int outputs, uint64_t seed) {
    if (feature_dim < 1 || outputs < 1) {
        throw ConfigError("router needs feature_dim >= 1 and outputs >= 1");
    }
    RouterModel model;
    model.feature_dim = feature_dim;
    model.outputs     = outputs;
    model.weights.resize(size_t(outputs) * size_t(feature_dim));
    model.bias.resize(size_t(outputs));

    Rng rng(seed);
    for (double & w : model.weights) {
        w = rng.uniform(-0.01, 0.01);
    }
    for (double & b : model.bias) {
        b = rng.uniform(-0.01, 0.01);
    }
    return model;
}

static double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

static double logit_for(const RouterModel & model, const std::vector<double> & x, int j) {
    const double * w   = &model.weights[size_t(j) * size_t(model.feature_dim)];
    double         acc = model.bias[size_t(j)];
    for (int f = 0; f < model.feature_dim; ++f) {
        acc += w[f] * x[size_t(f)];
    }
    return acc;
}

double router_bce_loss(const RouterModel & model, const std::vector<std::vector<double>> & features,
                       const std::vector<const uint8_t *> & targets) {
    if (features.empty() || features.size() != targets.size()) {
        throw InputError("loss needs matching non-empty features and targets");
    }
    double loss = 0.0;
    for (size_t s = 0; s < features.size(); ++s) {
        for (int j = 0; j < model.outputs; ++j) {
            const double z = logit_for(model, features[s], j);
            const double y = double(targets[s][j]);
            // stable form of -y*log(sigmoid(z)) - (1-y)*log(1-sigmoid(z))
            loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        }
    }
    return loss / double(features.size());
}

void router_bce_gradient(const RouterModel & model, const std::vector<std::vector<double>> & features,
                         const std::vector<const uint8_t *> & targets, std::vector<double> & grad_weights,
                         std::vector<double> & grad_bias) {
    grad_weights.assign(model.weights.size(), 0.0);
    grad_bias.assign(model.bias.size(), 0.0);
    const double inv_n = 1.0 / double(features.size());
    for (size_t s = 0; s < features.size(); ++s) {
        const std::vector<double> & x = features[s];
        for (int j = 0; j < model.outputs; ++j) {
            const double err = (sigmoid(logit_for(model, x, j)) - double(targets[s][j])) * inv_n;
            double *     gw  = &grad_weights[size_t(j) * size_t(model.feature_dim)];
            for (int f = 0; f < model.feature_dim; ++f) {
                gw[f] += err * x[size_t(f)];
            }
            grad_bias[size_t(j)] += err;
        }
    }
}

RouterModel train_router(const std::vector<TrainSample> & samples, const std::vector<uint8_t> & labels,
                         int dataset_count, int adapter_count, const RouterTrainConfig & config) {
    if (samples.empty()) {
        throw InputError("training set is empty");
    }
    if (int(labels.size()) != dataset_count * adapter_count) {
        throw ShapeError("label matrix shape mismatch");
    }

    std::vector<std::vector<double>> features;
    std::vector<const uint8_t *>     targets;
    features.reserve(samples.size());
    targets.reserve(samples.size());
    for (const TrainSample & s : samples) {
        if (s.dataset_id < 0 || s.dataset_id >= dataset_count) {
            throw LookupError("sample names dataset " + std::to_string(s.dataset_id));
        }
        features.push_back(featurize(s.prompt, config.feature_dim));
        targets.push_back(&labels[size_t(s.dataset_id) * size_t(adapter_count)]);
    }

    RouterModel         model = init_router(config.feature_dim, adapter_count, config.seed);
    std::vector<double> grad_w;
    std::vector<double> grad_b;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        router_bce_gradient(model, features, targets, grad_w, grad_b);
        for (size_t i = 0; i < model.weights.size(); ++i) {
            model.weights[i] -= config.learning_rate * grad_w[i];
        }
        for (size_t i = 0; i < model.bias.size(); ++i) {
            model.bias[i] -= config.learning_rate * grad_b[i];
        }
    }
    return model;
}

std::vector<double> score(const RouterModel & model, const std::vector<int> & prompt) {
    const std::vector<double> x = featurize(prompt, model.feature_dim);
    std::vector<double>       scores(size_t(model.outputs));
    for (int j = 0; j < model.outputs; ++j) {
        scores[size_t(j)] = sigmoid(logit_for(model, x, j));
    }
    return scores;
}

std::vector<int> top_k_by_score(const std::vector<double> & scores, int k) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[size_t(a)] != scores[size_t(b)]) {
            return scores[size_t(a)] > scores[size_t(b)];
        }
        return a < b;
    });
    order.resize(size_t(std::min<size_t>(size_t(std::max(k, 0)), order.size())));
    return order;
}

const char * to_string(SelectionKind kind) {
    switch (kind) {
        case SelectionKind::Explicit:
            return "explicit";
        case SelectionKind::CachedTopK:
            return "cached_topk";
        case SelectionKind::LoadedTop1:
            return "loaded_top1";
    }
    return "unknown";
}

Selection select_adapter(const std::optional<int> & explicit_id, const RouterModel & router,
                         const std::vector<int> & prompt, const AdapterCache & cache,
                         const SelectionConfig & config) {
    if (explicit_id) {
        if (!cache.valid_id(*explicit_id)) {
            throw LookupError("explicit adapter id " + std::to_string(*explicit_id) + " is unknown");
        }
        return {*explicit_id, SelectionKind::Explicit};
    }

    const std::vector<double> scores     = score(router, prompt);
    const int                 k          = std::min(config.top_k, int(scores.size()));
    const std::vector<int>    candidates = top_k_by_score(scores, std::max(1, k));

    for (int id : candidates) {
        if (cache.resident(id)) {
            return {id, SelectionKind::CachedTopK};
        }
    }
    return {candidates.front(), SelectionKind::LoadedTop1};
}

void write_router_file(const std::string & path, const RouterModel & model) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write router file: " + path);
    }
    out.write(kRouterMagic, sizeof(kRouterMagic));
    const uint32_t version = kRouterFileVersion;
    const uint32_t f       = uint32_t(model.feature_dim);
    const uint32_t n       = uint32_t(model.outputs);
    out.write(reinterpret_cast<const char *>(&version), sizeof(version));
    out.write(reinterpret_cast<const char *>(&f), sizeof(f));
    out.write(reinterpret_cast<const char *>(&n), sizeof(n));
    out.write(reinterpret_cast<const char *>(model.weights.data()),
              std::streamsize(model.weights.size() * sizeof(double)));
    out.write(reinterpret_cast<const char *>(model.bias.data()),
              std::streamsize(model.bias.size() * sizeof(double)));
    if (!out) {
        throw IoError("short write: " + path);
    }
}

RouterModel read_router_file(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open router file: " + path);
    }
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kRouterMagic, sizeof(magic)) != 0) {
        throw FormatError("bad router magic: " + path);
    }
    uint32_t version = 0;
    uint32_t f       = 0;
    uint32_t n       = 0;
    in.read(reinterpret_cast<char *>(&version), sizeof(version));
    in.read(reinterpret_cast<char *>(&f), sizeof(f));
    in.read(reinterpret_cast<char *>(&n), sizeof(n));
    if (!in || version != kRouterFileVersion || f == 0 || n == 0) {
        throw FormatError("bad router header: " + path);
    }
    RouterModel model;
    model.feature_dim = int(f);
    model.outputs     = int(n);
    model.weights.resize(size_t(f) * size_t(n));
    model.bias.resize(size_t(n));
    in.read(reinterpret_cast<char *>(model.weights.data()),
            std::streamsize(model.weights.size() * sizeof(double)));
    in.read(reinterpret_cast<char *>(model.bias.data()), std::streamsize(model.bias.size() * sizeof(double)));
    if (!in) {
        throw FormatError("router file truncated: " + path);
    }
    return model;
}

std::vector<EvalDataset> make_topic_eval_datasets(const ToyBaseModel & model, const AdapterRegistry & registry,
                                                  int dataset_count, int examples_per_dataset, int prompt_min,
                                                  int prompt_max, uint64_t seed) {
    if (dataset_count < 1 || dataset_count > registry.count()) {
        throw ConfigError("dataset count must be in [1, adapter count]");
    }
    if (examples_per_dataset < 1 || prompt_min < 1 || prompt_max < prompt_min) {
        throw ConfigError("bad eval dataset shape");
    }
    const int vocab = model.config.vocab_size;

    std::vector<EvalDataset> datasets;
    datasets.reserve(size_t(dataset_count));
    for (int i = 0; i < dataset_count; ++i) {
        Rng               rng(derive_seed(seed, uint64_t(i)));
        const FullAdapter adapter = registry.load(i);

        EvalDataset ds;
        ds.id = i;
        ds.examples.reserve(size_t(examples_per_dataset));
        for (int e = 0; e < examples_per_dataset; ++e) {
            EvalExample ex;
            const int   len = rng.uniform_int(prompt_min, prompt_max);
            ex.prompt       = make_topic_prompt(i, len, vocab, registry.count(), rng);

            // the adapter's own greedy answer is the expected output
            const DecodeState state  = process_prompt(model, &adapter, ex.prompt);
            const auto [answer, _]   = decode_step(model, &adapter, state);
            ex.expected              = answer;
            ds.examples.push_back(std::move(ex));
        }
        datasets.push_back(std::move(ds));
    }
    return datasets;
}

std::vector<TrainSample> make_topic_corpus(int dataset_count, int per_dataset, int prompt_min, int prompt_max,
                                           int vocab_size, int adapter_count, uint64_t seed) {
    if (dataset_count < 1 || per_dataset < 1) {
        throw ConfigError("corpus needs datasets >= 1 and per_dataset >= 1");
    }
    std::vector<TrainSample> corpus;
    corpus.reserve(size_t(dataset_count) * size_t(per_dataset));
    for (int i = 0; i < dataset_count; ++i) {
        Rng rng(derive_seed(seed, 0x10000ull + uint64_t(i)));
        for (int s = 0; s < per_dataset; ++s) {
            TrainSample sample;
            sample.dataset_id = i;
            const int len     = rng.uniform_int(prompt_min, prompt_max);
            sample.prompt     = make_topic_prompt(i, len, vocab_size, adapter_count, rng);
            corpus.push_back(std::move(sample));
        }
    }
    return corpus;
}

void write_corpus(const std::string & path, const std::vector<TrainSample> & corpus) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write corpus file: " + path);
    }
    for (const TrainSample & s : corpus) {
        out << s.dataset_id << '|';
        for (size_t i = 0; i < s.prompt.size(); ++i) {
            if (i > 0) {
                out << ' ';
            }
            out << s.prompt[i];
        }
        out << '\n';
    }
}

std::vector<TrainSample> read_corpus(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open corpus file: " + path);
    }
    std::vector<TrainSample> corpus;
    std::string              line;
    int                      line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto bar = line.find('|');
        if (bar == std::string::npos) {
            throw FormatError("bad corpus record at " + path + ":" + std::to_string(line_no));
        }
        try {
            TrainSample s;
            s.dataset_id = std::stoi(line.substr(0, bar));
            std::stringstream ps(line.substr(bar + 1));
            int               tok;
            while (ps >> tok) {
                s.prompt.push_back(tok);
            }
            if (s.prompt.empty()) {
                throw FormatError("empty prompt");
            }
            corpus.push_back(std::move(s));
        } catch (const std::exception &) {
            throw FormatError("bad corpus record at " + path + ":" + std::to_string(line_no));
        }
    }
    return corpus;
}

}  // namespace loraserve
