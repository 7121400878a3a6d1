#pragma once

#include <cstdint>

#include "vforest/common.hpp"

namespace vf {

// Counter-based generator: every draw is a pure function of (seed, key stream),
// so object i gets the same values no matter which thread generates it.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix64(seed ^ 0x9e3779b97f4a7c15ull)) {}

    // Derive an independent stream keyed by one or more integers.
    Rng fork(std::uint64_t key) const { return Rng(mix64(state_ ^ mix64(key))); }
    Rng fork(std::uint64_t k1, std::uint64_t k2) const { return fork(k1).fork(k2); }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix64(state_);
    }

    // Uniform in [0,1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    std::uint64_t next_below(std::uint64_t n) { return n ? next_u64() % n : 0; }

    // Standard normal via Box-Muller.
    double next_normal() {
        double u1 = next_double(), u2 = next_double();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    Vec3 in_unit_sphere() {
        for (;;) {
            Vec3 p{uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)};
            if (p.norm2() <= 1.0) return p;
        }
    }

    static std::uint64_t mix64(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

// R2 quasi-random sequence (generalized golden ratio), 2D low-discrepancy.
// `offset` acts as a Cranley-Patterson rotation so distinct streams decorrelate.
struct R2Sequence {
    double off_u = 0.0, off_v = 0.0;
    std::uint64_t n = 0;

    static constexpr double kAlpha1 = 0.7548776662466927;  // 1/phi2
    static constexpr double kAlpha2 = 0.5698402909980532;  // 1/phi2^2

    explicit R2Sequence(Rng stream) {
        off_u = stream.next_double();
        off_v = stream.next_double();
    }

    // Next point in [0,1)^2.
    void next(double& u, double& v) {
        ++n;
        u = std::fmod(off_u + kAlpha1 * static_cast<double>(n), 1.0);
        v = std::fmod(off_v + kAlpha2 * static_cast<double>(n), 1.0);
    }
};

// Map a unit-square point onto the triangle (a,b,c) via the parallelogram fold:
// points past the diagonal are reflected back, keeping the map area-preserving.
inline Vec3 square_to_triangle(double u, double v, const Vec3& a, const Vec3& b, const Vec3& c) {
    if (u + v > 1.0) { u = 1.0 - u; v = 1.0 - v; }
    return a + (b - a) * u + (c - a) * v;
}

}  // namespace vf
