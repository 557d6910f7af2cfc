#pragma once

#include <cmath>
#include <random>

#include "probegen/array.hpp"

namespace probegen {

// splitmix64; used to derive independent per-task seeds from a base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// mt19937_64 with hand-pinned draw algorithms so sequences are identical on
// every standard library (std distributions are implementation-defined).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, two fresh uniforms per draw.
    double normal() {
        double u1 = 1.0 - uniform();  // (0,1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // [0,n); modulo bias is irrelevant for n far below 2^64
    std::size_t uniform_index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

    template <typename T>
    void fill_uniform(DenseArray<T>& a, double lo, double hi) {
        for (T& v : a.data) v = static_cast<T>(uniform(lo, hi));
    }

    template <typename T>
    void fill_normal(DenseArray<T>& a, double mean, double stddev) {
        for (T& v : a.data) v = static_cast<T>(mean + stddev * normal());
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(i)]);
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace probegen
