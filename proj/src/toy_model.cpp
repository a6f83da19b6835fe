#include "loraserve/toy_model.hpp"

#include <cmath>
#include <string>

#include "loraserve/rng.hpp"

namespace loraserve {

void validate_full_adapter(const FullAdapter & a, int hidden_dim, int num_layers) {
    if (int(a.pairs.size()) != num_layers) {
        throw ShapeError("adapter has " + std::to_string(a.pairs.size()) + " layer pairs, expected " +
                         std::to_string(num_layers));
    }
    for (const LoraPair & p : a.pairs) {
        validate_lora_pair(p);
        if (p.rank != a.rank || p.dim() != hidden_dim) {
            throw ShapeError("adapter layer pair does not match declared rank/dim");
        }
    }
}

static void fill_uniform(Matrix & m, Rng & rng, double bound) {
    for (double & v : m.data) {
        v = rng.uniform(-bound, bound);
    }
}

ToyBaseModel build_model(const ToyModelConfig & config) {
    if (config.vocab_size < 2 || config.hidden_dim < 2 || config.num_layers < 1) {
        throw ConfigError("model config needs vocab >= 2, hidden >= 2, layers >= 1");
    }
    if (config.eos_token < 0 || config.eos_token >= config.vocab_size) {
        throw ConfigError("eos token out of vocab range");
    }

    ToyBaseModel model;
    model.config = config;

    Rng          rng(config.seed);
    const double bound = 1.0 / std::sqrt(double(config.hidden_dim));

    model.embedding = Matrix(config.vocab_size, config.hidden_dim);
    fill_uniform(model.embedding, rng, bound);

    model.layers.reserve(size_t(config.num_layers));
    for (int l = 0; l < config.num_layers; ++l) {
        Matrix w(config.hidden_dim, config.hidden_dim);
        fill_uniform(w, rng, bound);
        model.layers.push_back(std::move(w));
    }

    model.projection = Matrix(config.hidden_dim, config.vocab_size);
    fill_uniform(model.projection, rng, bound);
    return model;
}

int argmax_token(const ToyBaseModel & model, const std::vector<double> & hidden) {
    const std::vector<double> logits = transposed_matvec(model.projection, hidden);
    int                       best   = 0;
    for (int v = 1; v < int(logits.size()); ++v) {
        if (logits[size_t(v)] > logits[size_t(best)]) {
            best = v;
        }
    }
    return best;
}

TokenBatchResult forward_token_batch(const ToyBaseModel & model, const AdapterMap & adapters,
                                     const std::vector<int> & assignments, const std::vector<int> & tokens) {
    if (tokens.size() != assignments.size()) {
        throw ShapeError("token/assignment count mismatch");
    }
    if (tokens.empty()) {
        throw InputError("empty token batch");
    }
    const int d = model.config.hidden_dim;
    const int v = model.config.vocab_size;

    for (int t : tokens) {
        if (t < 0 || t >= v) {
            throw InputError("token " + std::to_string(t) + " out of vocab range");
        }
    }
    for (int id : assignments) {
        if (id == kNoAdapter) {
            continue;
        }
        auto it = adapters.find(id);
        if (it == adapters.end() || it->second == nullptr) {
            throw LookupError("unknown adapter id " + std::to_string(id));
        }
    }

    Matrix h(d, int(tokens.size()));
    for (int s = 0; s < h.cols; ++s) {
        const int tok = tokens[size_t(s)];
        for (int i = 0; i < d; ++i) {
            h.at(i, s) = model.embedding.at(tok, i);
        }
    }

    for (int l = 0; l < model.config.num_layers; ++l) {
        LoraLayerMap layer_map;
        layer_map.reserve(adapters.size());
        for (const auto & [id, adapter] : adapters) {
            layer_map.emplace(id, &adapter->pairs[size_t(l)]);
        }
        h = batch_lora_forward(model.layers[size_t(l)], layer_map, assignments, h);
        for (double & x : h.data) {
            x = std::tanh(x);
        }
    }

    TokenBatchResult result;
    result.next_tokens.reserve(tokens.size());
    for (int s = 0; s < h.cols; ++s) {
        result.next_tokens.push_back(argmax_token(model, column(h, s)));
    }
    result.hidden = std::move(h);
    return result;
}

static AdapterMap map_for(const FullAdapter * adapter) {
    AdapterMap map;
    if (adapter != nullptr) {
        map.emplace(adapter->id, adapter);
    }
    return map;
}

DecodeState process_prompt(const ToyBaseModel & model, const FullAdapter * adapter,
                           const std::vector<int> & prompt) {
    if (prompt.empty()) {
        throw InputError("empty prompt");
    }
    const AdapterMap map = map_for(adapter);
    const int        id  = adapter != nullptr ? adapter->id : kNoAdapter;

    DecodeState state;
    for (int tok : prompt) {
        const TokenBatchResult r = forward_token_batch(model, map, {id}, {tok});
        state.hidden             = column(r.hidden, 0);
    }
    return state;
}

std::pair<int, DecodeState> decode_step(const ToyBaseModel & model, const FullAdapter * adapter,
                                        const DecodeState & state) {
    const int token = argmax_token(model, state.hidden);

    const AdapterMap       map = map_for(adapter);
    const int              id  = adapter != nullptr ? adapter->id : kNoAdapter;
    const TokenBatchResult r   = forward_token_batch(model, map, {id}, {token});

    DecodeState next;
    next.hidden         = column(r.hidden, 0);
    next.tokens_emitted = state.tokens_emitted + 1;
    return {token, next};
}

std::vector<int> greedy_decode(const ToyBaseModel & model, const FullAdapter * adapter,
                               const std::vector<int> & prompt, int max_new_tokens) {
    DecodeState      state = process_prompt(model, adapter, prompt);
    std::vector<int> out;
    out.reserve(size_t(max_new_tokens));
    for (int i = 0; i < max_new_tokens; ++i) {
        auto [token, next] = decode_step(model, adapter, state);
        out.push_back(token);
        state = std::move(next);
        if (token == model.config.eos_token) {
            break;
        }
    }
    return out;
}

}  // namespace loraserve
