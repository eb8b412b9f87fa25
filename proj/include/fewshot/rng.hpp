#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace fewshot {

// All randomness in the engine flows through this generator. It is a
// xoshiro256** seeded through SplitMix64, with hand-rolled integer and
// normal draws, so sequences are identical across platforms and standard
// library versions. Derived streams (per episode, per purpose) come from
// Rng::derive, which chains SplitMix64 over a seed path; parallel episode
// evaluation therefore does not depend on scheduling order.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    uint64_t state_;
};

class Rng {
public:
    explicit Rng(uint64_t seed) {
        SplitMix64 sm(seed);
        for (auto& word : state_) word = sm.next();
    }

    // Stream derivation: derive(root, {a, b, c}) folds each path element
    // into the state with one SplitMix64 step per element.
    static uint64_t derive(uint64_t root, std::initializer_list<uint64_t> path) {
        uint64_t acc = root;
        for (uint64_t p : path) {
            SplitMix64 sm(acc ^ (p + 0x9e3779b97f4a7c15ULL + (acc << 6) + (acc >> 2)));
            acc = sm.next();
        }
        return acc;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform double in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n), mask rejection.
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        uint64_t mask = n - 1;
        mask |= mask >> 1;
        mask |= mask >> 2;
        mask |= mask >> 4;
        mask |= mask >> 8;
        mask |= mask >> 16;
        mask |= mask >> 32;
        uint64_t draw;
        do {
            draw = next_u64() & mask;
        } while (draw >= n);
        return draw;
    }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Standard normal via Box-Muller, caching the spare value.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (size_t i = items.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    // First k positions of a Fisher-Yates shuffle of 0..n-1.
    std::vector<int> sample_indices(int n, int k) {
        std::vector<int> pool(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
        for (int i = 0; i < k; ++i) {
            int j = i + static_cast<int>(below(static_cast<uint64_t>(n - i)));
            std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
        }
        pool.resize(static_cast<size_t>(k));
        return pool;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4] = {};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Seed-path tags used when deriving sub-streams. Values are arbitrary but
// frozen: changing them changes every sampled episode.
namespace seed_tag {
inline constexpr uint64_t split = 0x01;
inline constexpr uint64_t train = 0x02;
inline constexpr uint64_t eval = 0x03;
inline constexpr uint64_t fixed_shots = 0x04;
inline constexpr uint64_t init = 0x05;
inline constexpr uint64_t synth = 0x06;
inline constexpr uint64_t encoder = 0x07;
inline constexpr uint64_t finetune = 0x08;
inline constexpr uint64_t validation = 0x09;
}  // namespace seed_tag

}  // namespace fewshot
