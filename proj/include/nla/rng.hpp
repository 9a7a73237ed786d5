#ifndef NLA_RNG_HPP
#define NLA_RNG_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

namespace nla {

/// One step of SplitMix64 (Steele, Lea, Flood 2014). Used for seeding and
/// for deriving child seeds.
constexpr std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Child seed for stream `stream` of `seed`:
///   s = seed; a = splitmix64(s); t = a ^ (stream * 0xD1B54A32D192ED03); return splitmix64(t)
/// Pure function of (seed, stream); distinct streams give unrelated seeds.
constexpr std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed;
    std::uint64_t t = splitmix64(s) ^ (stream * 0xD1B54A32D192ED03ULL);
    return splitmix64(t);
}

/// xoshiro256** seeded from SplitMix64. All derived draws (uniform reals,
/// bounded integers, normals) are implemented here with integer and IEEE
/// arithmetic only, so streams are identical on every conforming platform.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit constexpr Rng(std::uint64_t seed) : seed_(seed) {
        std::uint64_t s = seed;
        for (auto& w : state_)
            w = splitmix64(s);
    }

    constexpr std::uint64_t seed() const { return seed_; }

    constexpr std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, bound) by rejection (no modulo bias).
    std::uint64_t below(std::uint64_t bound) {
        if (bound == 0)
            throw std::invalid_argument("Rng::below: bound must be positive");
        const std::uint64_t limit = (~std::uint64_t{0} / bound) * bound;
        std::uint64_t x = next_u64();
        while (x >= limit)
            x = next_u64();
        return x % bound;
    }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    /// Independent generator for stream `stream`; does not advance *this.
    Rng split(std::uint64_t stream) const { return Rng(split_seed(seed_, stream)); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// `count` distinct indices from [0, n), in draw order (partial Fisher-Yates).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count) {
        if (count > n)
            throw std::invalid_argument("sample_without_replacement: count > n");
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i)
            idx[i] = i;
        for (std::size_t i = 0; i < count; ++i) {
            const auto j = i + static_cast<std::size_t>(below(n - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(count);
        return idx;
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t seed_;
    std::array<std::uint64_t, 4> state_{};
    double cached_ = 0.0;
    bool has_cached_ = false;
};

} // namespace nla

#endif // NLA_RNG_HPP
