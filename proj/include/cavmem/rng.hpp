#pragma once
#include <cstdint>
#include <vector>

// Deterministic random numbers. std::<random> distributions are
// implementation-defined, so every draw here is hand-specified: results are
// byte-identical for a given (seed, trial index) on any conforming compiler.
// Generator: xoshiro256**; seeding/stream-splitting: splitmix64.

namespace cavmem {

struct SplitMix64 {
    uint64_t state;
    explicit SplitMix64(uint64_t seed) : state(seed) {}
    uint64_t next();
};

class Rng {
public:
    explicit Rng(uint64_t seed);

    // Independent per-trial substream: hash (seed, index) through splitmix64.
    static Rng for_trial(uint64_t seed, uint64_t trial_index);

    uint64_t next_u64();
    double uniform();                       // [0,1)
    double uniform_pos();                   // (0,1), safe for log()
    double normal();                        // Box-Muller, pair cached
    double exponential();                   // mean 1
    uint64_t poisson(double mean);          // Knuth multiplication, mean < 600
    uint64_t uniform_int(uint64_t n);       // [0,n), unbiased (rejection)
    bool bernoulli(double p) { return uniform() < p; }

    // index into a discrete distribution given unnormalized weights
    std::size_t discrete(const double* w, std::size_t n);

private:
    uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace cavmem
