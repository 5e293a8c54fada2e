#include "selffed/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace selffed {

uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

uint64_t mix_seed(uint64_t seed, std::initializer_list<uint64_t> tags) {
    uint64_t s = seed;
    uint64_t h = splitmix64(s);
    for (uint64_t t : tags) {
        s ^= splitmix64(s) + t;
        h = splitmix64(s) ^ (h * 0x100000001b3ULL);
    }
    return h;
}

Rng::Rng(uint64_t seed) : seed_(seed), engine_(seed) {}

uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform01() {
    // 53-bit mantissa construction, value in [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

uint64_t Rng::below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    // rejection sampling to stay unbiased
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1)));
}

double Rng::normal() {
    double u1;
    do {
        u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal(); }

double Rng::gamma(double alpha) {
    if (alpha <= 0.0) throw std::invalid_argument("Rng::gamma requires alpha > 0");
    if (alpha < 1.0) {
        // boost: Gamma(a) = Gamma(a+1) * U^{1/a}
        double u;
        do {
            u = uniform01();
        } while (u <= 0.0);
        return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform01();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::vector<double> Rng::dirichlet(double delta, int m) {
    std::vector<double> out(static_cast<size_t>(m));
    double total = 0.0;
    for (auto& v : out) {
        v = gamma(delta);
        total += v;
    }
    if (total <= 0.0) {
        // all-underflow corner; fall back to uniform
        for (auto& v : out) v = 1.0 / m;
        return out;
    }
    for (auto& v : out) v /= total;
    return out;
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
    std::vector<int> pool(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    shuffle(pool);
    pool.resize(static_cast<size_t>(k));
    return pool;
}

Rng Rng::child(uint64_t tag) const { return Rng(mix_seed(seed_, {tag})); }

}  // namespace selffed
