#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace pointdisc {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256++ with splitmix64 seeding. Explicit 4x u64 state so checkpoints
// can serialize it exactly; all sampling in the project goes through this.
class Rng {
  public:
    Rng() : Rng(0) {}

    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : state_) w = splitmix64(sm);
    }

    static Rng from_state(const std::array<std::uint64_t, 4>& s) {
        Rng r;
        r.state_ = s;
        return r;
    }

    const std::array<std::uint64_t, 4>& state() const { return state_; }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n); n >= 1 (Lemire's method).
    std::uint64_t below(std::uint64_t n) {
        __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
        auto lo = static_cast<std::uint64_t>(m);
        if (lo < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (lo < threshold) {
                m = static_cast<__uint128_t>(next_u64()) * n;
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(below(n)); }

    // Standard normal via Box-Muller; the sine twin is discarded so that the
    // generator state stays a pure function of the draw count.
    double normal() {
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<std::uint64_t, 4> state_{};
};

// Stream tags keep independently consumed RNG streams from colliding when they
// are all derived from one run seed.
enum class StreamTag : std::uint64_t {
    data_gen = 1,
    param_init = 2,
    shuffle = 3,
    groups = 4,
    probe = 5,
    probe_control = 6,
    gradcheck = 7,
    misc = 8,
};

inline Rng derive_rng(std::uint64_t seed, StreamTag tag, std::uint64_t a = 0,
                      std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = seed;
    splitmix64(s);
    s ^= static_cast<std::uint64_t>(tag) * 0x9e3779b97f4a7c15ULL;
    splitmix64(s);
    s ^= a * 0xbf58476d1ce4e5b9ULL;
    splitmix64(s);
    s ^= b * 0x94d049bb133111ebULL;
    splitmix64(s);
    s ^= c * 0xd6e8feb86659fd93ULL;
    return Rng(splitmix64(s));
}

}  // namespace pointdisc
