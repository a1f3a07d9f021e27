#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace wssam {

// Deterministic random source. std::mt19937_64 is bit-exact across
// implementations; the distribution mappings are hand-rolled because the
// std:: distributions are not.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t raw() { return eng_(); }

    // [0, 1)
    double uniform() {
        return double(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // [0, n)
    std::uint64_t integer(std::uint64_t n) {
        // modulo bias is irrelevant for the small n used here
        return eng_() % n;
    }

    // standard normal via Box-Muller
    double normal() {
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Independent child stream, stable under the order of derivations.
    static Rng derive(std::uint64_t seed, std::uint64_t stream, std::uint64_t salt = 0) {
        return Rng(mix(mix(seed ^ 0x9e3779b97f4a7c15ull, stream), salt));
    }

private:
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        // splitmix64 finalizer
        std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::mt19937_64 eng_;
};

}  // namespace wssam
