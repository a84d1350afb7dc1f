#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace nol {

// All randomness in the library flows through Rng, seeded explicitly.
// Distribution sampling is hand-rolled on top of mt19937_64 so that
// streams are bit-identical across standard library implementations.

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seed-splitting rule: a sub-seed is splitmix64(master ^ fnv1a(domain)).
// Every consumer (weight init, noise init, shuffling, attacks, ...) names
// its own domain string, so one master seed determines the whole run.
inline uint64_t derive_seed(uint64_t master, std::string_view domain) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : domain) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(master ^ h);
}

class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1) with 53 bits of mantissa
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, no spare caching (keeps the state exactly the mt19937_64 state)
    double normal() {
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // inclusive range, rejection sampling
    int uniform_int(int lo, int hi) {
        uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
        uint64_t bound = UINT64_MAX - UINT64_MAX % range;
        uint64_t x;
        do {
            x = gen_();
        } while (x >= bound);
        return lo + static_cast<int>(x % range);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(uniform_int(0, i))]);
        }
    }

    std::string state() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void restore(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
    }

  private:
    std::mt19937_64 gen_;
};

}  // namespace nol
