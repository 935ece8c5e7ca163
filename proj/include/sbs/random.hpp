#pragma once
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <utility>

namespace sbs {

/// Seed purposes for the named streams of a training run. Values are part of
/// the on-disk determinism contract; append new purposes, never renumber.
enum class StreamPurpose : std::uint64_t
{
    data_shuffle = 1,
    parameter_init = 2,
    gating = 3,
    subsample = 4,
    dataset = 5,
};

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace detail

/*
 * Counter-based generator: the i-th output is a pure function of (key, i).
 * Streams are split by hashing a tag into the key, so deriving a new stream
 * never shifts the outputs of an existing one. All distributions here are
 * hand-rolled so that sequences are identical across standard libraries.
 */
class SeedStream
{
public:
    using result_type = std::uint64_t;

    constexpr SeedStream() noexcept = default;
    constexpr explicit SeedStream(std::uint64_t key) noexcept : key_(detail::splitmix64(key)) {}

    /// Stream for (base seed, trial, purpose).
    static constexpr SeedStream derive(std::uint64_t base_seed, std::uint64_t trial, StreamPurpose purpose) noexcept
    {
        return SeedStream(base_seed).split(trial).split(static_cast<std::uint64_t>(purpose));
    }

    constexpr SeedStream split(std::uint64_t tag) const noexcept
    {
        SeedStream s;
        s.key_ = detail::splitmix64(key_ ^ detail::splitmix64(tag + 0x632be59bd9b4e019ULL));
        return s;
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept
    {
        return detail::splitmix64(key_ ^ detail::splitmix64(counter_++));
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (one output per pair of uniforms).
    double normal() noexcept
    {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, bound) by rejection; bound must be positive.
    std::uint64_t below(std::uint64_t bound) noexcept
    {
        const std::uint64_t limit = max() - max() % bound;
        std::uint64_t x;
        do { x = (*this)(); } while (x >= limit);
        return x % bound;
    }

    template <class T>
    void shuffle(std::span<T> items) noexcept
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            using std::swap;
            swap(items[i - 1], items[j]);
        }
    }

    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

} // namespace sbs
