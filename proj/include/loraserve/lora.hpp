#pragma once

#include <unordered_map>
#include <vector>

#include "loraserve/matrix.hpp"

namespace loraserve {

// Assignment value for a sample that runs through the base weights only.
inline constexpr int kNoAdapter = -1;

// One low-rank update for a single attach point: delta = scale * b * a with
// a (rank x dim) and b (dim x rank), rank strictly below dim.
struct LoraPair {
    int    rank = 0;
    Matrix a;
    Matrix b;
    double scale = 1.0;

    int dim() const { return b.rows; }
};

void validate_lora_pair(const LoraPair & p);
LoraPair make_lora_pair(int rank, Matrix a, Matrix b, double scale = 1.0);

// Samples of one compute batch that share an adapter. sample_indices are
// positions into the original batch, strictly increasing.
struct UBatch {
    int              adapter_id = kNoAdapter;
    std::vector<int> sample_indices;
};

using LoraLayerMap = std::unordered_map<int, const LoraPair *>;

// w + scale * (b * a); w is left untouched.
Matrix merge_adapter(const Matrix & w, const LoraPair & p);

// w*x + scale * b*(a*x), keeping the rank-sized intermediate.
std::vector<double> unmerged_forward(const Matrix & w, const LoraPair & p, const std::vector<double> & x);

// One UBatch per distinct id, ordered by first occurrence; indices keep input
// order, so they partition 0..n-1.
std::vector<UBatch> group_by_adapter(const std::vector<int> & assignments);

// Columns of x_batch are samples. The base term is one batched multiply over
// the full batch; adapter deltas are computed per u-batch (gather the columns,
// two batched multiplies, scatter-add back into place). kNoAdapter samples get
// the base term only.
Matrix batch_lora_forward(const Matrix & w, const LoraLayerMap & adapters, const std::vector<int> & assignments,
                          const Matrix & x_batch);

}  // namespace loraserve
