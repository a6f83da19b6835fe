#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "loraserve/adapter_store.hpp"
#include "loraserve/toy_model.hpp"

namespace loraserve {

inline constexpr char kRouterMagic[8] = {'E', 'L', 'O', 'R', 'A', 'R', 'T', 'R'};
inline constexpr uint32_t kRouterFileVersion = 1;

// Hashed bag of tokens, L1-normalized: order-insensitive, deterministic, and
// fixed-width regardless of vocab.
std::vector<double> featurize(const std::vector<int> & prompt, int feature_dim);

struct EvalExample {
    std::vector<int> prompt;
    int              expected = 0;  // next token the adapter should produce
};

struct EvalDataset {
    int                      id = 0;
    std::vector<EvalExample> examples;
};

// Performance of every adapter on every dataset, values in [0, 1].
struct ProfileMatrix {
    int                 datasets = 0;
    int                 adapters = 0;
    std::vector<double> values;

    double & at(int i, int j) { return values[size_t(i) * size_t(adapters) + size_t(j)]; }
    double   at(int i, int j) const { return values[size_t(i) * size_t(adapters) + size_t(j)]; }
};

// Exact-match accuracy of each adapter's greedy next-token prediction per
// dataset.
ProfileMatrix profile_adapters(const ToyBaseModel & model, const AdapterRegistry & registry,
                               const std::vector<EvalDataset> & datasets);

// Row-major m x n binary labels: 1 where the adapter is within epsilon of the
// row's best performance. Every row has at least one positive.
std::vector<uint8_t> build_labels(const ProfileMatrix & profile, double epsilon);

// Per-adapter suitability scorer: independent logistic outputs over hashed
// bag-of-token features.
struct RouterModel {
    int                 feature_dim = 0;
    int                 outputs     = 0;
    std::vector<double> weights;  // outputs x feature_dim, row-major
    std::vector<double> bias;     // outputs
};

RouterModel init_router(int feature_dim, int outputs, uint64_t seed);

struct TrainSample {
    std::vector<int> prompt;
    int              dataset_id = 0;
};

struct RouterTrainConfig {
    int      feature_dim   = 256;
    int      epochs        = 300;
    double   learning_rate = 5.0;
    uint64_t seed          = 1;
};

// Mean (over samples) of the summed per-output binary cross-entropy, computed
// from logits for numerical stability. targets[i] points at a row of
// `outputs` 0/1 labels.
double router_bce_loss(const RouterModel & model, const std::vector<std::vector<double>> & features,
                       const std::vector<const uint8_t *> & targets);
void   router_bce_gradient(const RouterModel & model, const std::vector<std::vector<double>> & features,
                           const std::vector<const uint8_t *> & targets, std::vector<double> & grad_weights,
                           std::vector<double> & grad_bias);

// Full-batch gradient descent on the BCE objective. labels is the dataset x
// adapter matrix from build_labels; each sample trains against its dataset's
// row.
RouterModel train_router(const std::vector<TrainSample> & samples, const std::vector<uint8_t> & labels,
                         int dataset_count, int adapter_count, const RouterTrainConfig & config);

// Sigmoid confidence per adapter, all in (0, 1).
std::vector<double> score(const RouterModel & model, const std::vector<int> & prompt);

// Top-k positions by score, ties broken toward the lower index.
std::vector<int> top_k_by_score(const std::vector<double> & scores, int k);

struct SelectionConfig {
    int top_k = 3;
};

enum class SelectionKind { Explicit, CachedTopK, LoadedTop1 };

const char * to_string(SelectionKind kind);

struct Selection {
    int           adapter_id = -1;
    SelectionKind kind       = SelectionKind::Explicit;
};

// Explicitly named adapters bypass scoring entirely. Otherwise the top-k
// candidates are scanned in descending score order and the first resident one
// wins; when none is resident the best-scoring candidate is returned for
// loading. Performs no cache mutation.
Selection select_adapter(const std::optional<int> & explicit_id, const RouterModel & router,
                         const std::vector<int> & prompt, const AdapterCache & cache,
                         const SelectionConfig & config);

void        write_router_file(const std::string & path, const RouterModel & model);
RouterModel read_router_file(const std::string & path);

// Profiling inputs: dataset i holds topic-i prompts answered by adapter i
// itself, so each adapter is the reference behavior for its own topic.
std::vector<EvalDataset> make_topic_eval_datasets(const ToyBaseModel & model, const AdapterRegistry & registry,
                                                  int dataset_count, int examples_per_dataset, int prompt_min,
                                                  int prompt_max, uint64_t seed);

// Fresh topic prompts labeled with their dataset id, for training or held-out
// evaluation.
std::vector<TrainSample> make_topic_corpus(int dataset_count, int per_dataset, int prompt_min, int prompt_max,
                                           int vocab_size, int adapter_count, uint64_t seed);

void                     write_corpus(const std::string & path, const std::vector<TrainSample> & corpus);
std::vector<TrainSample> read_corpus(const std::string & path);

}  // namespace loraserve
