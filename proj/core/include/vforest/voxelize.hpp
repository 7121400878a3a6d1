#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "vforest/grid.hpp"
#include "vforest/mesh.hpp"

namespace vf {

// Monte-Carlo area deposition: each triangle is sampled with n = ceil(32 r)
// quasi-random points (r = area / voxel footprint, floor of one sample) and
// each point deposits area/n into its containing voxel's material channel.
MaterialAreaGrid voxelize_sampled(const TriangleMesh& mesh, const VoxelGridSpec& spec,
                                  std::uint64_t rng_seed);

// Exact reference: clip every triangle against the six half-spaces of each
// overlapped voxel and accumulate exact polygon areas.
MaterialAreaGrid voxelize_exact(const TriangleMesh& mesh, const VoxelGridSpec& spec);

// Normalize voxel areas into per-material fractions. Voxels with total area
// below min_area are omitted. Result is sorted by linear voxel index.
std::vector<std::pair<std::uint64_t, TargetFractions>> areas_to_fractions(
    const MaterialAreaGrid& grid, double min_area = 1e-6);

}  // namespace vf
