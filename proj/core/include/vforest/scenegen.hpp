#pragma once

#include <cstdint>

#include "vforest/mesh.hpp"

namespace vf {

struct SceneConfig {
    Vec3 extent{50.0, 50.0, 30.0};   // meters
    int tree_count = 14;
    int shrub_count = 10;
    int misc_count = 2;
    double leaf_density = 8.0;       // crown shell triangles per m^3 of crown
    std::uint64_t rng_seed = 1;

    void validate() const;
};

// Deterministic synthetic forest: Soil ground with mild sinusoidal relief,
// Bark trunk/branch cylinders, Leaf crown/shrub ellipsoid shells, Misc boxes.
// Identical config (including seed) produces a bit-identical mesh.
TriangleMesh generate_scene(const SceneConfig& config);

}  // namespace vf
