#include "vforest/voxelize.hpp"

#include <algorithm>
#include <cmath>

#include "vforest/parallel.hpp"
#include "vforest/rng.hpp"

namespace vf {

namespace {

constexpr std::size_t kChunks = 64;  // fixed partition keeps results thread-count independent

[[noreturn]] void out_of_bounds(std::size_t triangle_index) {
    throw ValidationError("triangle " + std::to_string(triangle_index) +
                          " lies outside the voxel grid");
}

void sample_triangle(const TriangleMesh& mesh, std::size_t t_idx, const VoxelGridSpec& spec,
                     std::uint64_t rng_seed, MaterialAreaGrid& grid) {
    const Triangle& tri = mesh.triangles[t_idx];
    const Vec3 a = mesh.vertices[tri.v[0]];
    const Vec3 b = mesh.vertices[tri.v[1]];
    const Vec3 c = mesh.vertices[tri.v[2]];
    const double area = triangle_area(a, b, c);
    const double footprint = spec.voxel_size * spec.voxel_size;
    const double r = area / footprint;
    const auto n = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(32.0 * r)));
    const double deposit = area / static_cast<double>(n);

    R2Sequence seq(Rng(rng_seed).fork(0x5a3f, t_idx));
    for (std::uint64_t s = 0; s < n; ++s) {
        double u, v;
        seq.next(u, v);
        const Vec3 p = square_to_triangle(u, v, a, b, c);
        const auto cell = spec.cell_of(p);
        if (!cell) out_of_bounds(t_idx);
        grid.add(*cell, tri.material, deposit);
    }
}

// Clip a convex polygon against one axis-aligned half-space.
// keep_below: keep points with p[axis] <= bound; otherwise p[axis] >= bound.
void clip_axis(std::vector<Vec3>& poly, std::vector<Vec3>& scratch, int axis, double bound,
               bool keep_below) {
    scratch.clear();
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& cur = poly[i];
        const Vec3& nxt = poly[(i + 1) % n];
        const double dc = keep_below ? bound - cur[axis] : cur[axis] - bound;
        const double dn = keep_below ? bound - nxt[axis] : nxt[axis] - bound;
        const bool in_cur = dc >= 0.0;
        const bool in_nxt = dn >= 0.0;
        if (in_cur) scratch.push_back(cur);
        if (in_cur != in_nxt) {
            const double t = dc / (dc - dn);
            scratch.push_back(cur + (nxt - cur) * t);
        }
    }
    poly.swap(scratch);
}

double polygon_area(const std::vector<Vec3>& poly) {
    if (poly.size() < 3) return 0.0;
    Vec3 s{0, 0, 0};
    for (std::size_t i = 0; i < poly.size(); ++i)
        s += poly[i].cross(poly[(i + 1) % poly.size()]);
    return 0.5 * s.norm();
}

void clip_triangle(const TriangleMesh& mesh, std::size_t t_idx, const VoxelGridSpec& spec,
                   MaterialAreaGrid& grid) {
    const Triangle& tri = mesh.triangles[t_idx];
    const Vec3 a = mesh.vertices[tri.v[0]];
    const Vec3 b = mesh.vertices[tri.v[1]];
    const Vec3 c = mesh.vertices[tri.v[2]];

    std::int64_t lo[3], hi[3];
    for (int axis = 0; axis < 3; ++axis) {
        const double mn = std::min({a[axis], b[axis], c[axis]});
        const double mx = std::max({a[axis], b[axis], c[axis]});
        const auto ilo = spec.axis_index(mn, axis);
        const auto ihi = spec.axis_index(mx, axis);
        if (!ilo || !ihi) out_of_bounds(t_idx);
        lo[axis] = *ilo;
        hi[axis] = *ihi;
    }

    std::vector<Vec3> poly, scratch;
    for (std::int64_t iz = lo[2]; iz <= hi[2]; ++iz)
        for (std::int64_t iy = lo[1]; iy <= hi[1]; ++iy)
            for (std::int64_t ix = lo[0]; ix <= hi[0]; ++ix) {
                const VoxelCoord cell{static_cast<std::uint32_t>(ix),
                                      static_cast<std::uint32_t>(iy),
                                      static_cast<std::uint32_t>(iz)};
                const Vec3 cmin = spec.cell_min(cell);
                poly = {a, b, c};
                for (int axis = 0; axis < 3 && poly.size() >= 3; ++axis) {
                    clip_axis(poly, scratch, axis, cmin[axis], false);
                    if (poly.size() < 3) break;
                    clip_axis(poly, scratch, axis, cmin[axis] + spec.voxel_size, true);
                }
                const double area = polygon_area(poly);
                if (area > 0.0) grid.add(cell, tri.material, area);
            }
}

template <typename PerTriangle>
MaterialAreaGrid run_chunked(const TriangleMesh& mesh, const VoxelGridSpec& spec,
                             const PerTriangle& per_triangle) {
    std::vector<MaterialAreaGrid> partials(std::min(kChunks, std::max<std::size_t>(1, mesh.triangles.size())),
                                           MaterialAreaGrid(spec));
    parallel_chunks(mesh.triangles.size(), partials.size(),
                    [&](std::size_t chunk, std::size_t begin, std::size_t end) {
                        for (std::size_t t = begin; t < end; ++t)
                            per_triangle(t, partials[chunk]);
                    });
    MaterialAreaGrid grid(spec);
    for (const auto& p : partials) grid.merge(p);
    grid.finalize();
    return grid;
}

}  // namespace

MaterialAreaGrid voxelize_sampled(const TriangleMesh& mesh, const VoxelGridSpec& spec,
                                  std::uint64_t rng_seed) {
    spec.validate();
    return run_chunked(mesh, spec, [&](std::size_t t, MaterialAreaGrid& g) {
        sample_triangle(mesh, t, spec, rng_seed, g);
    });
}

MaterialAreaGrid voxelize_exact(const TriangleMesh& mesh, const VoxelGridSpec& spec) {
    spec.validate();
    return run_chunked(mesh, spec, [&](std::size_t t, MaterialAreaGrid& g) {
        clip_triangle(mesh, t, spec, g);
    });
}

std::vector<std::pair<std::uint64_t, TargetFractions>> areas_to_fractions(
    const MaterialAreaGrid& grid, double min_area) {
    if (min_area <= 0) throw ValidationError("min_area must be > 0");
    std::vector<std::pair<std::uint64_t, TargetFractions>> rows;
    grid.for_each([&](std::uint64_t lin, const std::array<double, kMaterialCount>& a) {
        const double total = a[0] + a[1] + a[2] + a[3];
        if (total < min_area) return;
        TargetFractions f;
        for (int m = 0; m < kMaterialCount; ++m) f[m] = a[m] / total;
        rows.emplace_back(lin, f);
    });
    return rows;
}

}  // namespace vf
