#include "loraserve/lora.hpp"

#include <string>
#include <utility>

namespace loraserve {

void validate_lora_pair(const LoraPair & p) {
    if (p.rank <= 0 || p.a.rows != p.rank || p.b.cols != p.rank) {
        throw ShapeError("lora pair rank mismatch");
    }
    if (p.a.cols != p.b.rows) {
        throw ShapeError("lora pair a/b dim mismatch");
    }
    if (p.rank >= p.b.rows) {
        throw ShapeError("lora rank " + std::to_string(p.rank) + " must be below dim " +
                         std::to_string(p.b.rows));
    }
}

LoraPair make_lora_pair(int rank, Matrix a, Matrix b, double scale) {
    LoraPair p{rank, std::move(a), std::move(b), scale};
    validate_lora_pair(p);
    return p;
}

static void check_pair_against(const Matrix & w, const LoraPair & p) {
    validate_lora_pair(p);
    if (p.a.cols != w.cols || p.b.rows != w.rows) {
        throw ShapeError("lora pair does not match weight matrix " + std::to_string(w.rows) + "x" +
                         std::to_string(w.cols));
    }
}

Matrix merge_adapter(const Matrix & w, const LoraPair & p) {
    if (w.rows != w.cols) {
        throw ShapeError("merge target must be square");
    }
    check_pair_against(w, p);
    const Matrix delta  = matmul(p.b, p.a);
    Matrix       merged = w;
    for (size_t i = 0; i < merged.data.size(); ++i) {
        merged.data[i] += p.scale * delta.data[i];
    }
    return merged;
}

std::vector<double> unmerged_forward(const Matrix & w, const LoraPair & p, const std::vector<double> & x) {
    check_pair_against(w, p);
    std::vector<double>       y  = matvec(w, x);
    const std::vector<double> ax = matvec(p.a, x);
    for (int i = 0; i < p.b.rows; ++i) {
        double acc = 0.0;
        for (int k = 0; k < p.rank; ++k) {
            acc += p.b.at(i, k) * ax[size_t(k)];
        }
        y[size_t(i)] += p.scale * acc;
    }
    return y;
}

std::vector<UBatch> group_by_adapter(const std::vector<int> & assignments) {
    std::vector<UBatch>          groups;
    std::unordered_map<int, int> slot_of;
    for (int i = 0; i < int(assignments.size()); ++i) {
        const int id = assignments[size_t(i)];
        auto      it = slot_of.find(id);
        if (it == slot_of.end()) {
            slot_of.emplace(id, int(groups.size()));
            groups.push_back(UBatch{id, {i}});
        } else {
            groups[size_t(it->second)].sample_indices.push_back(i);
        }
    }
    return groups;
}

Matrix batch_lora_forward(const Matrix & w, const LoraLayerMap & adapters, const std::vector<int> & assignments,
                          const Matrix & x_batch) {
    if (int(assignments.size()) != x_batch.cols) {
        throw ShapeError("assignment count does not match batch size");
    }

    // base term: one multiply across the whole batch
    Matrix y = matmul(w, x_batch);

    for (const UBatch & ub : group_by_adapter(assignments)) {
        if (ub.adapter_id == kNoAdapter) {
            continue;
        }
        auto it = adapters.find(ub.adapter_id);
        if (it == adapters.end() || it->second == nullptr) {
            throw LookupError("unknown adapter id " + std::to_string(ub.adapter_id));
        }
        const LoraPair & p = *it->second;
        check_pair_against(w, p);

        // gather
        Matrix gathered(x_batch.rows, int(ub.sample_indices.size()));
        for (int j = 0; j < gathered.cols; ++j) {
            const int src = ub.sample_indices[size_t(j)];
            for (int i = 0; i < gathered.rows; ++i) {
                gathered.at(i, j) = x_batch.at(i, src);
            }
        }

        const Matrix ax  = matmul(p.a, gathered);
        const Matrix bax = matmul(p.b, ax);

        // scatter-add into the original positions
        for (int j = 0; j < bax.cols; ++j) {
            const int dst = ub.sample_indices[size_t(j)];
            for (int i = 0; i < bax.rows; ++i) {
                y.at(i, dst) += p.scale * bax.at(i, j);
            }
        }
    }
    return y;
}

}  // namespace loraserve
