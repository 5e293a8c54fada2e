#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace selffed {

// splitmix64 step; the standard constants.
uint64_t splitmix64(uint64_t& state);

// Hash a seed together with a list of stream tags into a fresh seed.
// Used to derive independent, reproducible sub-streams (per client, per
// round, per image) from the single experiment seed.
uint64_t mix_seed(uint64_t seed, std::initializer_list<uint64_t> tags);

// Deterministic RNG wrapper. All distributions are implemented on top of
// the raw mt19937_64 output so that results are identical across standard
// libraries and platforms (std::uniform_real_distribution makes no such
// guarantee).
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();

    // uniform in [0,1) with 53 bits of randomness
    double uniform01();
    double uniform(double lo, double hi);

    // unbiased integer in [0, n), n > 0
    uint64_t below(uint64_t n);
    // inclusive range
    int64_t uniform_int(int64_t lo, int64_t hi);

    // standard normal, Box-Muller
    double normal();
    double normal(double mean, double stddev);

    // Gamma(alpha, 1), Marsaglia-Tsang with the alpha < 1 boost
    double gamma(double alpha);

    // Dirichlet with symmetric concentration delta, m components
    std::vector<double> dirichlet(double delta, int m);

    // Fisher-Yates
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct values out of {0..n-1}, in draw order
    std::vector<int> sample_without_replacement(int n, int k);

    // derive a child stream; deterministic in (current seed, tag) only,
    // does not consume state from this stream
    Rng child(uint64_t tag) const;

private:
    uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace selffed
