#pragma once

#include <cstdint>
#include <unordered_map>
#include <utility>
#include <vector>

#include "loraserve/lora.hpp"

namespace loraserve {

struct ToyModelConfig {
    int      vocab_size = 128;
    int      hidden_dim = 64;
    int      num_layers = 4;
    uint64_t seed       = 42;
    int      eos_token  = 127;
};

// Seeded deterministic base model: token embedding, a stack of square linear
// layers with tanh between them (each layer is a LoRA attach point), and an
// output projection. Weights are immutable after build and safe to share
// across threads.
struct ToyBaseModel {
    ToyModelConfig      config;
    Matrix              embedding;   // V x d
    std::vector<Matrix> layers;      // each d x d
    Matrix              projection;  // d x V
};

// One logical adapter: a LoraPair per model layer, all of the same rank.
struct FullAdapter {
    int                   id   = -1;
    int                   rank = 0;
    std::vector<LoraPair> pairs;
};

void validate_full_adapter(const FullAdapter & a, int hidden_dim, int num_layers);

struct DecodeState {
    std::vector<double> hidden;
    int                 tokens_emitted = 0;
};

ToyBaseModel build_model(const ToyModelConfig & config);

struct TokenBatchResult {
    Matrix           hidden;  // d x batch
    std::vector<int> next_tokens;
};

using AdapterMap = std::unordered_map<int, const FullAdapter *>;

// Runs one batch of single tokens through the full stack and greedily picks
// each sample's next token (argmax over logits, lowest index on ties).
// assignments[i] names the adapter for sample i, or kNoAdapter.
TokenBatchResult forward_token_batch(const ToyBaseModel & model, const AdapterMap & adapters,
                                     const std::vector<int> & assignments, const std::vector<int> & tokens);

// argmax over projection^T * hidden, lowest index wins ties
int argmax_token(const ToyBaseModel & model, const std::vector<double> & hidden);

// Feeds the prompt one token at a time (cost grows with prompt length) and
// returns the state holding the final token's hidden vector. adapter may be
// nullptr for a base-only pass.
DecodeState process_prompt(const ToyBaseModel & model, const FullAdapter * adapter,
                           const std::vector<int> & prompt);

// One greedy step: pick the next token from the current hidden state, then
// advance the hidden state through that token.
std::pair<int, DecodeState> decode_step(const ToyBaseModel & model, const FullAdapter * adapter,
                                        const DecodeState & state);

// Prompt processing plus up to max_new_tokens greedy steps; stops early after
// emitting eos.
std::vector<int> greedy_decode(const ToyBaseModel & model, const FullAdapter * adapter,
                               const std::vector<int> & prompt, int max_new_tokens);

}  // namespace loraserve
