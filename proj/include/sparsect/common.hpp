// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sparsect {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Base class for all library errors.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Violated precondition or invalid configuration (maps to CLI exit code 2).
struct validation_error : error {
    using error::error;
};

/// File / serialization failure.
struct io_error : error {
    using error::error;
};

/// Numerical domain failure during an otherwise valid computation
/// (e.g. cone-beam point at or behind the source plane).
struct numeric_error : error {
    using error::error;
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw validation_error(what);
}

// ---------------------------------------------------------------------------
// Small vector math
// ---------------------------------------------------------------------------

inline constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * (kPi / 180.0); }

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    bool operator==(const Vec3&) const = default;
    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const double n = norm();
        return n > 0.0 ? Vec3{x / n, y / n, z / n} : Vec3{};
    }
};

/// Right-handed rotation of a point about +z by `rad`
/// (counterclockwise when viewed from +z).
inline Vec3 rotate_z(const Vec3& p, double rad) {
    const double c = std::cos(rad);
    const double s = std::sin(rad);
    return {c * p.x - s * p.y, s * p.x + c * p.y, p.z};
}

inline double lerp(double a, double b, double t) { return a + t * (b - a); }

// ---------------------------------------------------------------------------
// Counter-based RNG
// ---------------------------------------------------------------------------

/// Stateless counter-based generator (SplitMix64 finalizer over
/// seed + counter). Every stochastic operation in the library draws from an
/// explicit (seed, counter) pair, so results never depend on call order or
/// on how work is split across threads.
class CounterRng {
  public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t bits(std::uint64_t counter) const {
        std::uint64_t z = seed_ + (counter + 1) * 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform draw in the open interval (0, 1).
    double uniform(std::uint64_t counter) const {
        return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal draw (Box-Muller over counters 2n and 2n+1).
    double gaussian(std::uint64_t counter) const {
        const double u1 = uniform(2 * counter);
        const double u2 = uniform(2 * counter + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    /// Derives an independent stream seed for a tagged sub-process
    /// (e.g. the per-timestep noise of a sampling trajectory).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
        std::uint64_t z = seed ^ (0x9E3779B97F4A7C15ULL + tag * 0xD1B54A32D192ED03ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

  private:
    std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Deterministic parallel loops
// ---------------------------------------------------------------------------

inline unsigned resolve_threads(unsigned requested) {
    if (requested != 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

/// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is
/// processed exactly once and chunk boundaries carry no state, so output is
/// identical for any thread count as long as index i writes only slot i.
template <typename Fn>
void parallel_chunks(std::size_t n, unsigned threads, Fn&& fn) {
    const unsigned nt = resolve_threads(threads);
    if (n == 0) return;
    if (nt <= 1 || n < 2 * nt) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex guard;
    const std::size_t chunk = (n + nt - 1) / nt;
    for (unsigned k = 0; k < nt; ++k) {
        const std::size_t b = k * chunk;
        if (b >= n) break;
        const std::size_t e = std::min(n, b + chunk);
        pool.emplace_back([&, b, e] {
            try {
                fn(b, e);
            } catch (...) {
                std::lock_guard<std::mutex> lock(guard);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    parallel_chunks(n, threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) fn(i);
    });
}

}  // namespace sparsect
