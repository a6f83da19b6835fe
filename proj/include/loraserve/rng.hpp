#pragma once

#include <cstdint>
#include <random>

namespace loraserve {

uint64_t splitmix64(uint64_t x);

// Mixes a stream index into a base seed so independent draws (arrivals,
// adapter picks, lengths, ...) can share one user-facing seed without
// coupling their sequences.
uint64_t derive_seed(uint64_t base, uint64_t stream);

// Deterministic generator. std::mt19937_64 output is fully specified by the
// standard; the mappings below avoid std::*_distribution, whose results vary
// across standard libraries, so one seed reproduces the same draws on every
// platform.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // [0, 1) with 53-bit resolution
    double uniform();
    double uniform(double lo, double hi);

    // inclusive bounds
    int uniform_int(int lo, int hi);

    double normal();

    // Gamma(shape, scale). Marsaglia-Tsang squeeze method for shape >= 1;
    // shape < 1 uses the boost identity Gamma(a) = Gamma(a+1) * U^(1/a).
    double gamma(double shape, double scale);

  private:
    std::mt19937_64 eng_;
};

}  // namespace loraserve
