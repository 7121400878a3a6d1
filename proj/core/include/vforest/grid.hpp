#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vforest/common.hpp"
#include "vforest/mesh.hpp"

namespace vf {

struct VoxelCoord {
    std::uint32_t ix = 0, iy = 0, iz = 0;
    bool operator==(const VoxelCoord&) const = default;
};

struct VoxelGridSpec {
    Vec3 origin{0, 0, 0};
    double voxel_size = 1.0;
    std::array<std::uint32_t, 3> dims{1, 1, 1};

    void validate() const;

    std::uint64_t cell_count() const {
        return std::uint64_t(dims[0]) * dims[1] * dims[2];
    }
    std::uint64_t linear(const VoxelCoord& c) const {
        return (std::uint64_t(c.iz) * dims[1] + c.iy) * dims[0] + c.ix;
    }
    VoxelCoord coord(std::uint64_t lin) const {
        VoxelCoord c;
        c.ix = static_cast<std::uint32_t>(lin % dims[0]);
        c.iy = static_cast<std::uint32_t>((lin / dims[0]) % dims[1]);
        c.iz = static_cast<std::uint32_t>(lin / (std::uint64_t(dims[0]) * dims[1]));
        return c;
    }

    // Index along one axis with the boundary tie rule: a coordinate exactly on
    // a face belongs to the lower-index voxel (grid-min face stays in cell 0).
    std::optional<std::int64_t> axis_index(double coord, int axis) const;

    // Voxel containing p, or nullopt when p lies outside the grid.
    std::optional<VoxelCoord> cell_of(const Vec3& p) const;

    Vec3 cell_min(const VoxelCoord& c) const {
        return origin + Vec3{c.ix * voxel_size, c.iy * voxel_size, c.iz * voxel_size};
    }
    Vec3 cell_center(const VoxelCoord& c) const {
        return cell_min(c) + Vec3{0.5, 0.5, 0.5} * voxel_size;
    }
    Vec3 grid_max() const {
        return origin + Vec3{dims[0] * voxel_size, dims[1] * voxel_size, dims[2] * voxel_size};
    }

    // Smallest grid anchored at `origin` whose cells cover `box`.
    static VoxelGridSpec covering(const Aabb& box, double voxel_size, const Vec3& origin);
    static VoxelGridSpec covering(const Aabb& box, double voxel_size);

    bool operator==(const VoxelGridSpec&) const = default;
};

// Per-voxel per-material surface areas. Accumulation is sparse; finalize()
// switches to a dense array when at least 10% of the cells are occupied and
// the grid is small enough to hold densely.
class MaterialAreaGrid {
public:
    MaterialAreaGrid() = default;
    explicit MaterialAreaGrid(const VoxelGridSpec& spec) : spec_(spec) {}

    const VoxelGridSpec& spec() const { return spec_; }

    void add(std::uint64_t lin, Material m, double area);
    void add(const VoxelCoord& c, Material m, double area) { add(spec_.linear(c), m, area); }

    // Merge `other` into this grid (same spec required).
    void merge(const MaterialAreaGrid& other);

    // Choose the final storage representation. Idempotent.
    void finalize(std::uint64_t dense_cell_limit = (1ull << 22));

    const std::array<double, kMaterialCount>* find(std::uint64_t lin) const;

    std::uint64_t occupied_count() const;

    // Visit occupied cells in ascending linear-index order.
    void for_each(const std::function<void(std::uint64_t, const std::array<double, kMaterialCount>&)>& fn) const;

    std::array<double, kMaterialCount> material_totals() const;
    double total_area() const;

    bool is_dense() const { return dense_; }

private:
    VoxelGridSpec spec_;
    bool dense_ = false;
    std::vector<double> cells_;  // dense: 4 doubles per cell
    std::unordered_map<std::uint64_t, std::array<double, kMaterialCount>> sparse_;
    mutable std::vector<std::uint64_t> sorted_keys_;  // cache for for_each on sparse
    mutable bool keys_valid_ = false;
};

// "VXA1": little-endian header {magic, voxel_size f64, origin 3xf64, dims 3xu32,
// occupied_count u64} followed by {ix,iy,iz u32; area 4xf64} records.
void write_vxa1(const MaterialAreaGrid& grid, const std::string& path);
MaterialAreaGrid read_vxa1(const std::string& path);

// CSV mirror: ix,iy,iz,bark_area,leaf_area,soil_area,misc_area
void write_area_csv(const MaterialAreaGrid& grid, const std::string& path);

using TargetFractions = std::array<double, kMaterialCount>;

}  // namespace vf
