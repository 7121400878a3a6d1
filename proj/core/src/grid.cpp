#include "vforest/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "vforest/io.hpp"

namespace vf {

void VoxelGridSpec::validate() const {
    if (voxel_size <= 0) throw ValidationError("voxel_size must be > 0");
    if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0)
        throw ValidationError("grid dims must be positive");
}

std::optional<std::int64_t> VoxelGridSpec::axis_index(double coord, int axis) const {
    const double o = origin[axis];
    const double t = (coord - o) / voxel_size;
    double fl = std::floor(t);
    std::int64_t i = static_cast<std::int64_t>(fl);
    if (t == fl && i > 0) --i;  // face ownership: lower-index voxel
    if (i < 0 || i >= static_cast<std::int64_t>(dims[axis])) return std::nullopt;
    return i;
}

std::optional<VoxelCoord> VoxelGridSpec::cell_of(const Vec3& p) const {
    const auto ix = axis_index(p.x, 0);
    const auto iy = axis_index(p.y, 1);
    const auto iz = axis_index(p.z, 2);
    if (!ix || !iy || !iz) return std::nullopt;
    return VoxelCoord{static_cast<std::uint32_t>(*ix), static_cast<std::uint32_t>(*iy),
                      static_cast<std::uint32_t>(*iz)};
}

VoxelGridSpec VoxelGridSpec::covering(const Aabb& box, double voxel_size, const Vec3& origin) {
    if (voxel_size <= 0) throw ValidationError("voxel_size must be > 0");
    if (box.empty()) throw ValidationError("cannot build a grid over an empty bounding box");
    VoxelGridSpec spec;
    spec.origin = origin;
    spec.voxel_size = voxel_size;
    for (int a = 0; a < 3; ++a) {
        const double span = box.hi[a] - origin[a];
        if (span < 0 || box.lo[a] < origin[a])
            throw ValidationError("grid origin does not cover the bounding box");
        auto n = static_cast<std::int64_t>(std::ceil(span / voxel_size));
        if (n < 1) n = 1;
        spec.dims[a] = static_cast<std::uint32_t>(n);
    }
    return spec;
}

VoxelGridSpec VoxelGridSpec::covering(const Aabb& box, double voxel_size) {
    return covering(box, voxel_size, box.lo);
}

void MaterialAreaGrid::add(std::uint64_t lin, Material m, double area) {
    if (dense_) {
        cells_[lin * kMaterialCount + static_cast<int>(m)] += area;
    } else {
        sparse_[lin][static_cast<int>(m)] += area;
        keys_valid_ = false;
    }
}

void MaterialAreaGrid::merge(const MaterialAreaGrid& other) {
    if (!(other.spec_ == spec_)) throw ValidationError("cannot merge grids with different specs");
    other.for_each([this](std::uint64_t lin, const std::array<double, kMaterialCount>& a) {
        for (int m = 0; m < kMaterialCount; ++m)
            if (a[m] != 0.0) add(lin, static_cast<Material>(m), a[m]);
    });
}

void MaterialAreaGrid::finalize(std::uint64_t dense_cell_limit) {
    if (dense_) return;
    const std::uint64_t cells = spec_.cell_count();
    if (cells == 0 || cells > dense_cell_limit) return;
    if (sparse_.size() * 10 < cells) return;  // occupied fraction below 10%: stay sparse
    cells_.assign(cells * kMaterialCount, 0.0);
    for (const auto& [lin, a] : sparse_)
        for (int m = 0; m < kMaterialCount; ++m) cells_[lin * kMaterialCount + m] = a[m];
    sparse_.clear();
    dense_ = true;
}

const std::array<double, kMaterialCount>* MaterialAreaGrid::find(std::uint64_t lin) const {
    if (dense_) {
        const auto* p = reinterpret_cast<const std::array<double, kMaterialCount>*>(
            cells_.data() + lin * kMaterialCount);
        for (int m = 0; m < kMaterialCount; ++m)
            if ((*p)[m] != 0.0) return p;
        return nullptr;
    }
    auto it = sparse_.find(lin);
    return it == sparse_.end() ? nullptr : &it->second;
}

std::uint64_t MaterialAreaGrid::occupied_count() const {
    if (!dense_) return sparse_.size();
    std::uint64_t n = 0;
    const std::uint64_t cells = spec_.cell_count();
    for (std::uint64_t i = 0; i < cells; ++i)
        for (int m = 0; m < kMaterialCount; ++m)
            if (cells_[i * kMaterialCount + m] != 0.0) { ++n; break; }
    return n;
}

void MaterialAreaGrid::for_each(
    const std::function<void(std::uint64_t, const std::array<double, kMaterialCount>&)>& fn) const {
    if (dense_) {
        const std::uint64_t cells = spec_.cell_count();
        for (std::uint64_t i = 0; i < cells; ++i) {
            const auto* a = reinterpret_cast<const std::array<double, kMaterialCount>*>(
                cells_.data() + i * kMaterialCount);
            if ((*a)[0] != 0.0 || (*a)[1] != 0.0 || (*a)[2] != 0.0 || (*a)[3] != 0.0) fn(i, *a);
        }
        return;
    }
    if (!keys_valid_) {
        sorted_keys_.clear();
        sorted_keys_.reserve(sparse_.size());
        for (const auto& kv : sparse_) sorted_keys_.push_back(kv.first);
        std::sort(sorted_keys_.begin(), sorted_keys_.end());
        keys_valid_ = true;
    }
    for (std::uint64_t k : sorted_keys_) fn(k, sparse_.at(k));
}

std::array<double, kMaterialCount> MaterialAreaGrid::material_totals() const {
    std::array<double, kMaterialCount> totals{};
    for_each([&](std::uint64_t, const std::array<double, kMaterialCount>& a) {
        for (int m = 0; m < kMaterialCount; ++m) totals[m] += a[m];
    });
    return totals;
}

double MaterialAreaGrid::total_area() const {
    auto t = material_totals();
    return t[0] + t[1] + t[2] + t[3];
}

void write_vxa1(const MaterialAreaGrid& grid, const std::string& path) {
    io::BinaryWriter w(path);
    const VoxelGridSpec& s = grid.spec();
    w.magic("VXA1");
    w.f64(s.voxel_size);
    w.f64(s.origin.x);
    w.f64(s.origin.y);
    w.f64(s.origin.z);
    w.u32(s.dims[0]);
    w.u32(s.dims[1]);
    w.u32(s.dims[2]);
    w.u64(grid.occupied_count());
    grid.for_each([&](std::uint64_t lin, const std::array<double, kMaterialCount>& a) {
        const VoxelCoord c = s.coord(lin);
        w.u32(c.ix);
        w.u32(c.iy);
        w.u32(c.iz);
        for (int m = 0; m < kMaterialCount; ++m) w.f64(a[m]);
    });
    if (!w.good()) throw ComputeError("write failed: " + path);
}

MaterialAreaGrid read_vxa1(const std::string& path) {
    io::BinaryReader r(path);
    r.expect_magic("VXA1");
    VoxelGridSpec s;
    s.voxel_size = r.f64();
    s.origin.x = r.f64();
    s.origin.y = r.f64();
    s.origin.z = r.f64();
    s.dims = {r.u32(), r.u32(), r.u32()};
    s.validate();
    MaterialAreaGrid grid(s);
    const std::uint64_t n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        VoxelCoord c{r.u32(), r.u32(), r.u32()};
        if (c.ix >= s.dims[0] || c.iy >= s.dims[1] || c.iz >= s.dims[2])
            throw ValidationError(path + ": voxel record out of bounds");
        for (int m = 0; m < kMaterialCount; ++m) {
            const double a = r.f64();
            if (a != 0.0) grid.add(c, static_cast<Material>(m), a);
        }
    }
    grid.finalize();
    return grid;
}

void write_area_csv(const MaterialAreaGrid& grid, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out << "ix,iy,iz,bark_area,leaf_area,soil_area,misc_area\n";
    const VoxelGridSpec& s = grid.spec();
    grid.for_each([&](std::uint64_t lin, const std::array<double, kMaterialCount>& a) {
        const VoxelCoord c = s.coord(lin);
        out << c.ix << ',' << c.iy << ',' << c.iz;
        for (int m = 0; m < kMaterialCount; ++m) out << ',' << io::format_double(a[m]);
        out << '\n';
    });
}

}  // namespace vf
