#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "loraserve/rng.hpp"

namespace loraserve {

struct WorkloadConfig {
    int      n                 = 20;    // adapters
    double   alpha             = 1.0;   // power-law exponent; higher concentrates on low ranks
    double   rate              = 0.5;   // requests per second
    double   cv                = 1.0;   // coefficient of variation of inter-arrival times
    double   duration_s        = 60.0;  // arrival window
    int      input_min         = 8;
    int      input_max         = 32;
    int      output_min        = 8;
    int      output_max        = 32;
    double   explicit_fraction = 0.0;   // share of requests that name their adapter
    uint64_t seed              = 7;
    int      vocab_size        = 128;   // token space the prompts are drawn from
};

struct TraceEvent {
    double             arrival_ms = 0.0;
    std::vector<int>   prompt;
    int                intended_adapter = 0;  // ground truth for router evaluation
    std::optional<int> explicit_adapter;
    int                target_output_len = 1;
};

// P(i) proportional to (i+1)^-alpha over ids 0..n-1 (rank 1 maps to id 0);
// sums to 1.
std::vector<double> power_law_pmf(int n, double alpha);

// i.i.d. Gamma(shape = 1/cv^2, scale = cv^2/rate) inter-arrival times, in
// seconds.
std::vector<double> sample_intervals(double rate, double cv, int count, uint64_t seed);

// Each adapter owns a slice of the token space (the top token is reserved for
// eos). Slices are disjoint while n is at most vocab_size - 1 and wrap beyond
// that.
int              topic_token(int adapter_id, int vocab_size, int adapter_count);
std::vector<int> topic_vocab(int adapter_id, int vocab_size, int adapter_count);

// Topic token first, then filler drawn from the adapter's topic vocabulary.
std::vector<int> make_topic_prompt(int adapter_id, int length, int vocab_size, int adapter_count, Rng & rng);

std::vector<TraceEvent> generate_trace(const WorkloadConfig & config);

void                    write_trace(const std::string & path, const std::vector<TraceEvent> & trace);
std::vector<TraceEvent> read_trace(const std::string & path);

}  // namespace loraserve
