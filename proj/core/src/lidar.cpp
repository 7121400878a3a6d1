#include "vforest/lidar.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vforest/io.hpp"
#include "vforest/parallel.hpp"
#include "vforest/rng.hpp"
#include "vforest/voxelize.hpp"

namespace vf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void SensorConfigCheck(const SensorConfig& s) {
    if (s.altitude <= 0 || s.speed <= 0 || s.flight_lines <= 0 || s.side_overlap < 0 ||
        s.pulse_rate <= 0 || s.pulse_energy <= 0 || s.gate_range <= 0 || s.ray_spacing <= 0)
        throw ValidationError("sensor configuration values must be positive");
    if (s.gate_range < s.altitude)
        throw ValidationError("gate_range must reach the ground (>= altitude) for nadir coverage");
}

// Ray / grid AABB overlap in ray-parameter space.
bool clip_to_grid(const VoxelGridSpec& spec, const Vec3& o, const Vec3& d, double& t0, double& t1) {
    const Vec3 lo = spec.origin;
    const Vec3 hi = spec.grid_max();
    for (int a = 0; a < 3; ++a) {
        const double da = d[a];
        if (std::fabs(da) < 1e-300) {
            if (o[a] < lo[a] || o[a] > hi[a]) return false;
            continue;
        }
        double ta = (lo[a] - o[a]) / da;
        double tb = (hi[a] - o[a]) / da;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    return t0 < t1;
}

// Nearest soil-triangle hit, accelerated by 2D x-y binning. Rays here are
// near-nadir, so the swept x-y footprint touches only a few bins.
class SoilIndex {
public:
    SoilIndex(const TriangleMesh& mesh, const Aabb& box, double bin_size)
        : mesh_(mesh), bin_(std::max(bin_size, 0.25)) {
        org_x_ = box.lo.x;
        org_y_ = box.lo.y;
        nx_ = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil((box.hi.x - box.lo.x) / bin_)));
        ny_ = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil((box.hi.y - box.lo.y) / bin_)));
        bins_.resize(static_cast<std::size_t>(nx_ * ny_));
        for (std::uint32_t t = 0; t < mesh.triangles.size(); ++t) {
            if (mesh.triangles[t].material != Material::Soil) continue;
            Aabb tb;
            for (int c = 0; c < 3; ++c) tb.expand(mesh.vertex(mesh.triangles[t], c));
            const std::int64_t bx0 = clamp_x(cell_x(tb.lo.x)), bx1 = clamp_x(cell_x(tb.hi.x));
            const std::int64_t by0 = clamp_y(cell_y(tb.lo.y)), by1 = clamp_y(cell_y(tb.hi.y));
            for (std::int64_t by = by0; by <= by1; ++by)
                for (std::int64_t bx = bx0; bx <= bx1; ++bx)
                    bins_[static_cast<std::size_t>(by * nx_ + bx)].push_back(t);
        }
    }

    double nearest_hit(const Vec3& o, const Vec3& d, double t_max) const {
        // Conservative: visit every bin overlapped by the segment footprint.
        const Vec3 p0 = o;
        const Vec3 p1 = o + d * t_max;
        const std::int64_t bx0 = clamp_x(cell_x(std::min(p0.x, p1.x)) - 1);
        const std::int64_t bx1 = clamp_x(cell_x(std::max(p0.x, p1.x)) + 1);
        const std::int64_t by0 = clamp_y(cell_y(std::min(p0.y, p1.y)) - 1);
        const std::int64_t by1 = clamp_y(cell_y(std::max(p0.y, p1.y)) + 1);
        double best = kInf;
        for (std::int64_t by = by0; by <= by1; ++by)
            for (std::int64_t bx = bx0; bx <= bx1; ++bx)
                for (std::uint32_t t : bins_[static_cast<std::size_t>(by * nx_ + bx)]) {
                    const double hit = intersect(t, o, d);
                    if (hit >= 0.0 && hit < best) best = hit;
                }
        return best <= t_max ? best : kInf;
    }

private:
    std::int64_t cell_x(double x) const { return static_cast<std::int64_t>(std::floor((x - org_x_) / bin_)); }
    std::int64_t cell_y(double y) const { return static_cast<std::int64_t>(std::floor((y - org_y_) / bin_)); }
    std::int64_t clamp_x(std::int64_t i) const { return std::clamp<std::int64_t>(i, 0, nx_ - 1); }
    std::int64_t clamp_y(std::int64_t i) const { return std::clamp<std::int64_t>(i, 0, ny_ - 1); }

    // Moller-Trumbore; returns t >= 0 or -1.
    double intersect(std::uint32_t tri_idx, const Vec3& o, const Vec3& d) const {
        const Triangle& tri = mesh_.triangles[tri_idx];
        const Vec3 v0 = mesh_.vertices[tri.v[0]];
        const Vec3 e1 = mesh_.vertices[tri.v[1]] - v0;
        const Vec3 e2 = mesh_.vertices[tri.v[2]] - v0;
        const Vec3 pv = d.cross(e2);
        const double det = e1.dot(pv);
        if (std::fabs(det) < 1e-14) return -1.0;
        const double inv = 1.0 / det;
        const Vec3 tv = o - v0;
        const double u = tv.dot(pv) * inv;
        if (u < 0.0 || u > 1.0) return -1.0;
        const Vec3 qv = tv.cross(e1);
        const double v = d.dot(qv) * inv;
        if (v < 0.0 || u + v > 1.0) return -1.0;
        const double t = e2.dot(qv) * inv;
        return t >= 0.0 ? t : -1.0;
    }

    const TriangleMesh& mesh_;
    double bin_, org_x_, org_y_;
    std::int64_t nx_, ny_;
    std::vector<std::vector<std::uint32_t>> bins_;
};

double extinction(const MaterialAreaGrid& areas, std::uint64_t lin) {
    const auto* a = areas.find(lin);
    if (!a) return 0.0;
    const double s = areas.spec().voxel_size;
    return ((*a)[0] + (*a)[1] + (*a)[2] + (*a)[3]) / (s * s * s);
}

struct SampleAccumulator {
    double dt;
    std::vector<double>& samples;

    void ensure(std::size_t idx) {
        if (samples.size() <= idx + 1) samples.resize(idx + 2, 0.0);
    }

    // Deposit the exact scattered energy of an exponential-decay segment into
    // the sample windows it overlaps; telescoping keeps the sum exact.
    void deposit_segment(double t_a, double t_b, double energy_in, double kappa) {
        if (kappa <= 0.0 || t_b <= t_a) return;
        auto window_of = [&](double t) { return static_cast<std::int64_t>(std::floor(t / dt + 0.5)); };
        for (std::int64_t i = std::max<std::int64_t>(0, window_of(t_a));; ++i) {
            const double w0 = (static_cast<double>(i) - 0.5) * dt;
            const double w1 = w0 + dt;
            if (w0 >= t_b) break;
            const double a = std::max(t_a, w0);
            const double b = std::min(t_b, w1);
            if (b <= a) continue;
            const double dep = energy_in * (std::exp(-kappa * (a - t_a)) - std::exp(-kappa * (b - t_a)));
            ensure(static_cast<std::size_t>(i));
            samples[static_cast<std::size_t>(i)] += dep / dt;
        }
    }

    void deposit_spike(double t, double energy) {
        if (energy <= 0.0) return;
        const auto i = static_cast<std::size_t>(std::max<std::int64_t>(
            0, static_cast<std::int64_t>(std::floor(t / dt + 0.5))));
        ensure(i);
        samples[i] += energy / dt;
    }
};

Waveform march_ray(const Vec3& origin, const Vec3& dir, const MaterialAreaGrid& areas,
                   const SoilIndex& soil, const SensorConfig& sensor) {
    const VoxelGridSpec& spec = areas.spec();
    Waveform wf;
    wf.origin = origin;
    wf.direction = dir;
    wf.dt = spec.voxel_size / 4.0;
    wf.escaped_energy = sensor.pulse_energy;

    double t0 = 0.0, t1 = sensor.gate_range;
    if (!clip_to_grid(spec, origin, dir, t0, t1)) return wf;

    const double t_ground = soil.nearest_hit(origin, dir, t1 + 1e-9);
    const double t_end = std::min(t1, t_ground);

    SampleAccumulator acc{wf.dt, wf.samples};
    double energy = sensor.pulse_energy;
    for (const RaySegment& seg : traverse_grid(spec, origin, dir, t0, t_end)) {
        const double kappa = extinction(areas, seg.lin);
        const double len = seg.t_exit - seg.t_enter;
        acc.deposit_segment(seg.t_enter, seg.t_exit, energy, kappa);
        energy *= std::exp(-kappa * len);
    }
    if (t_ground <= t1) {  // opaque ground return absorbs the rest
        acc.deposit_spike(t_ground, energy);
        energy = 0.0;
    }
    wf.escaped_energy = energy;
    return wf;
}

struct RayLattice {
    std::vector<Vec3> origins;
    std::vector<Vec3> directions;
};

RayLattice build_lattice(const VoxelGridSpec& spec, const SensorConfig& sensor,
                         std::uint64_t rng_seed) {
    const Vec3 lo = spec.origin;
    const Vec3 hi = spec.grid_max();
    const double ex = hi.x - lo.x;
    const double ey = hi.y - lo.y;
    const double spacing = sensor.ray_spacing;
    const double z0 = lo.z + sensor.altitude;

    RayLattice lattice;
    std::uint64_t ray_id = 0;
    for (int line = 0; line < sensor.flight_lines; ++line) {
        const double y_line = ey * (line + 0.5) / sensor.flight_lines;
        const double swath = std::min(ey, ey / sensor.flight_lines + sensor.side_overlap);
        const int n_across = static_cast<int>(std::floor(swath / spacing));
        for (int a = 0; a <= n_across; ++a) {
            const double y = y_line - swath / 2.0 + a * spacing;
            if (y < 0.0 || y > ey) continue;
            const int n_along = static_cast<int>(std::floor(ex / spacing));
            for (int i = 0; i <= n_along; ++i) {
                const double x = std::min(ex, (i + 0.5) * spacing);
                if (x > ex) continue;
                Rng jitter = Rng(rng_seed).fork(0xaa17, ray_id++);
                const double jx = jitter.uniform(-0.15, 0.15) * spacing;
                const double jy = jitter.uniform(-0.15, 0.15) * spacing;
                const Vec3 d = Vec3{jitter.uniform(-0.01, 0.01), jitter.uniform(-0.01, 0.01), -1.0}
                                   .normalized();
                lattice.origins.push_back({lo.x + std::clamp(x + jx, 0.0, ex),
                                           lo.y + std::clamp(y + jy, 0.0, ey), z0});
                lattice.directions.push_back(d);
            }
        }
    }
    if (lattice.origins.empty())
        throw ValidationError("ray lattice is empty: ray_spacing too large for the scene extent");
    return lattice;
}

}  // namespace

void SensorConfig::validate() const { SensorConfigCheck(*this); }

double Waveform::trapezoid_total() const {
    if (samples.size() < 2) return 0.0;
    double s = 0.5 * (samples.front() + samples.back());
    for (std::size_t i = 1; i + 1 < samples.size(); ++i) s += samples[i];
    return s * dt;
}

std::vector<RaySegment> traverse_grid(const VoxelGridSpec& spec, const Vec3& origin,
                                      const Vec3& direction, double t_min, double t_max) {
    std::vector<RaySegment> segments;
    double t0 = t_min, t1 = t_max;
    if (!clip_to_grid(spec, origin, direction, t0, t1)) return segments;

    // Entry cell; nudge forward so a face-exact entry lands in the cell ahead.
    const double nudge = 1e-9 * std::max(1.0, std::fabs(t0));
    const Vec3 p = origin + direction * (t0 + nudge);
    std::int64_t cell[3];
    std::int64_t dims[3] = {spec.dims[0], spec.dims[1], spec.dims[2]};
    for (int a = 0; a < 3; ++a) {
        auto i = static_cast<std::int64_t>(std::floor((p[a] - spec.origin[a]) / spec.voxel_size));
        cell[a] = std::clamp<std::int64_t>(i, 0, dims[a] - 1);
    }

    double t_next[3];
    double t_delta[3];
    int step[3];
    for (int a = 0; a < 3; ++a) {
        const double da = direction[a];
        if (std::fabs(da) < 1e-300) {
            step[a] = 0;
            t_next[a] = kInf;
            t_delta[a] = kInf;
        } else {
            step[a] = da > 0 ? 1 : -1;
            const double bound =
                spec.origin[a] + (cell[a] + (da > 0 ? 1 : 0)) * spec.voxel_size;
            t_next[a] = (bound - origin[a]) / da;
            t_delta[a] = spec.voxel_size / std::fabs(da);
        }
    }

    double t_cur = t0;
    const std::uint64_t max_steps = std::uint64_t(spec.dims[0]) + spec.dims[1] + spec.dims[2] + 3;
    for (std::uint64_t n = 0; n < max_steps; ++n) {
        int axis = 0;
        if (t_next[1] < t_next[axis]) axis = 1;
        if (t_next[2] < t_next[axis]) axis = 2;
        const double t_exit = std::min(t_next[axis], t1);
        if (t_exit > t_cur) {
            segments.push_back({spec.linear(VoxelCoord{static_cast<std::uint32_t>(cell[0]),
                                                       static_cast<std::uint32_t>(cell[1]),
                                                       static_cast<std::uint32_t>(cell[2])}),
                                t_cur, t_exit});
        }
        if (t_next[axis] >= t1) break;
        t_cur = t_next[axis];
        cell[axis] += step[axis];
        if (cell[axis] < 0 || cell[axis] >= dims[axis]) break;
        t_next[axis] += t_delta[axis];
    }
    return segments;
}

std::vector<Waveform> cast_rays(const TriangleMesh& mesh, const MaterialAreaGrid& areas,
                                const SensorConfig& sensor, std::uint64_t rng_seed) {
    sensor.validate();
    const VoxelGridSpec& spec = areas.spec();
    spec.validate();
    Aabb box;
    box.expand(spec.origin);
    box.expand(spec.grid_max());
    SoilIndex soil(mesh, box, spec.voxel_size);
    const RayLattice lattice = build_lattice(spec, sensor, rng_seed);

    std::vector<Waveform> rays(lattice.origins.size());
    parallel_chunks(lattice.origins.size(), 64, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            rays[i] = march_ray(lattice.origins[i], lattice.directions[i], areas, soil, sensor);
    });
    return rays;
}

std::vector<Waveform> cast_rays(const TriangleMesh& mesh, const VoxelGridSpec& spec,
                                const SensorConfig& sensor, std::uint64_t rng_seed) {
    MaterialAreaGrid areas = voxelize_sampled(mesh, spec, rng_seed);
    return cast_rays(mesh, areas, sensor, rng_seed);
}

std::vector<VoxelFraction> voxel_fractions(const Waveform& wf, const VoxelGridSpec& spec) {
    std::vector<VoxelFraction> out;
    const std::size_t n = wf.samples.size();
    if (n < 2 || wf.dt <= 0.0) return out;

    std::vector<double> cumulative(n, 0.0);
    for (std::size_t i = 1; i < n; ++i)
        cumulative[i] = cumulative[i - 1] + 0.5 * (wf.samples[i - 1] + wf.samples[i]) * wf.dt;
    const double total = cumulative.back();
    if (total <= 0.0) return out;

    const double t_last = wf.dt * static_cast<double>(n - 1);
    auto integral_to = [&](double t) {
        if (t <= 0.0) return 0.0;
        if (t >= t_last) return total;
        const auto k = static_cast<std::size_t>(t / wf.dt);
        const double local = t - wf.dt * static_cast<double>(k);
        const double s0 = wf.samples[k];
        const double s1 = wf.samples[k + 1];
        return cumulative[k] + s0 * local + (s1 - s0) * local * local / (2.0 * wf.dt);
    };

    for (const RaySegment& seg : traverse_grid(spec, wf.origin, wf.direction, 0.0, kInf)) {
        const double len = seg.t_exit - seg.t_enter;
        if (len <= 0.0) continue;
        const double head = integral_to(seg.t_enter);
        const double tail = total - head;  // signal past the voxel entry
        const double inside = integral_to(seg.t_exit) - head;
        VoxelFraction rec;
        rec.lin = seg.lin;
        rec.path_length = len;
        rec.f_scatter = tail > 0.0 ? inside / tail : 0.0;
        rec.f_remaining = tail > 0.0 ? tail / total : 0.0;
        out.push_back(rec);
    }
    return out;
}

const IntensityGrid::Cell* IntensityGrid::find(std::uint64_t lin) const {
    auto it = cells_.find(lin);
    return it == cells_.end() ? nullptr : &it->second;
}

void IntensityGrid::for_each(const std::function<void(std::uint64_t, const Cell&)>& fn) const {
    for (const auto& [lin, cell] : cells_) fn(lin, cell);
}

IntensityGrid aggregate_intensity(const std::vector<std::vector<VoxelFraction>>& rays,
                                  const VoxelGridSpec& spec) {
    // Gather per-voxel contributions, then sort before summing so the result
    // does not depend on ray order.
    std::map<std::uint64_t, std::vector<double>> contributions;
    for (const auto& ray : rays)
        for (const VoxelFraction& rec : ray) {
            if (rec.path_length <= 0.0) continue;
            contributions[rec.lin].push_back(rec.f_scatter * rec.f_remaining / rec.path_length);
        }
    IntensityGrid grid(spec);
    for (auto& [lin, values] : contributions) {
        std::sort(values.begin(), values.end());
        double sum = 0.0;
        for (double v : values) sum += v;
        IntensityGrid::Cell cell;
        cell.hits = static_cast<std::uint32_t>(values.size());
        cell.intensity = cell.hits ? sum / cell.hits : 0.0;
        grid.set(lin, cell);
    }
    return grid;
}

IntensityGrid simulate_intensity(const TriangleMesh& mesh, const MaterialAreaGrid& areas,
                                 const SensorConfig& sensor, std::uint64_t rng_seed) {
    sensor.validate();
    const VoxelGridSpec& spec = areas.spec();
    Aabb box;
    box.expand(spec.origin);
    box.expand(spec.grid_max());
    SoilIndex soil(mesh, box, spec.voxel_size);
    const RayLattice lattice = build_lattice(spec, sensor, rng_seed);

    std::vector<std::vector<VoxelFraction>> per_ray(lattice.origins.size());
    parallel_chunks(lattice.origins.size(), 64, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const Waveform wf =
                march_ray(lattice.origins[i], lattice.directions[i], areas, soil, sensor);
            per_ray[i] = voxel_fractions(wf, spec);
        }
    });
    return aggregate_intensity(per_ray, spec);
}

void write_vfw1(const std::vector<Waveform>& rays, const std::string& path) {
    io::BinaryWriter w(path);
    w.magic("VFW1");
    w.u64(rays.size());
    for (const Waveform& wf : rays) {
        w.f64(wf.origin.x);
        w.f64(wf.origin.y);
        w.f64(wf.origin.z);
        w.f64(wf.direction.x);
        w.f64(wf.direction.y);
        w.f64(wf.direction.z);
        w.u32(static_cast<std::uint32_t>(wf.samples.size()));
        w.f64(wf.dt);
        for (double s : wf.samples) w.f32(static_cast<float>(s));
    }
    if (!w.good()) throw ComputeError("write failed: " + path);
}

std::vector<Waveform> read_vfw1(const std::string& path) {
    io::BinaryReader r(path);
    r.expect_magic("VFW1");
    const std::uint64_t n = r.u64();
    std::vector<Waveform> rays(n);
    for (auto& wf : rays) {
        wf.origin = {r.f64(), r.f64(), r.f64()};
        wf.direction = {r.f64(), r.f64(), r.f64()};
        const std::uint32_t count = r.u32();
        wf.dt = r.f64();
        wf.samples.resize(count);
        for (auto& s : wf.samples) s = r.f32();
    }
    return rays;
}

void write_vxi1(const IntensityGrid& grid, const std::string& path) {
    io::BinaryWriter w(path);
    const VoxelGridSpec& s = grid.spec();
    w.magic("VXI1");
    w.f64(s.voxel_size);
    w.f64(s.origin.x);
    w.f64(s.origin.y);
    w.f64(s.origin.z);
    w.u32(s.dims[0]);
    w.u32(s.dims[1]);
    w.u32(s.dims[2]);
    w.u64(grid.occupied_count());
    grid.for_each([&](std::uint64_t lin, const IntensityGrid::Cell& cell) {
        const VoxelCoord c = s.coord(lin);
        w.u32(c.ix);
        w.u32(c.iy);
        w.u32(c.iz);
        w.f64(cell.intensity);
        w.u32(cell.hits);
    });
    if (!w.good()) throw ComputeError("write failed: " + path);
}

IntensityGrid read_vxi1(const std::string& path) {
    io::BinaryReader r(path);
    r.expect_magic("VXI1");
    VoxelGridSpec s;
    s.voxel_size = r.f64();
    s.origin = {r.f64(), r.f64(), r.f64()};
    s.dims = {r.u32(), r.u32(), r.u32()};
    s.validate();
    IntensityGrid grid(s);
    const std::uint64_t n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        VoxelCoord c{r.u32(), r.u32(), r.u32()};
        if (c.ix >= s.dims[0] || c.iy >= s.dims[1] || c.iz >= s.dims[2])
            throw ValidationError(path + ": voxel record out of bounds");
        IntensityGrid::Cell cell;
        cell.intensity = r.f64();
        cell.hits = r.u32();
        grid.set(s.linear(c), cell);
    }
    return grid;
}

}  // namespace vf
