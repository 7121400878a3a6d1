#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vforest/grid.hpp"
#include "vforest/mesh.hpp"

namespace vf {

struct SensorConfig {
    double altitude = 88.0;        // m above ground
    double speed = 5.0;            // m/s platform velocity
    int flight_lines = 4;
    double side_overlap = 50.0;    // m
    double pulse_rate = 18080.0;   // Hz
    double pulse_energy = 2e-7;    // J
    double gate_range = 119.8;     // m, receiver gate window
    double wavelength_nm = 903.0;  // metadata only
    // Effective ground spacing between retained rays; the implied decimation
    // factor relative to the native pulse train is ray_spacing/(speed/pulse_rate).
    double ray_spacing = 0.5;      // m

    void validate() const;
};

// Sampled return signal along one ray. Samples start at t = 0 (the sensor)
// with fixed spacing dt; sample i holds the mean scattered-energy density
// over [i*dt - dt/2, i*dt + dt/2], so the trapezoid integral over the whole
// waveform reproduces the scattered energy exactly.
struct Waveform {
    Vec3 origin;
    Vec3 direction;  // unit
    double dt = 0.0;
    std::vector<double> samples;
    double escaped_energy = 0.0;  // energy leaving the grid unscattered (diagnostic)

    double time_of(std::size_t i) const { return dt * static_cast<double>(i); }
    double trapezoid_total() const;
};

struct RaySegment {
    std::uint64_t lin = 0;
    double t_enter = 0.0;
    double t_exit = 0.0;
};

// Amanatides-Woo grid traversal clipped to [t_min, t_max]. The returned
// segments partition the clipped ray-grid overlap with no gaps.
std::vector<RaySegment> traverse_grid(const VoxelGridSpec& spec, const Vec3& origin,
                                      const Vec3& direction, double t_min, double t_max);

std::vector<Waveform> cast_rays(const TriangleMesh& mesh, const VoxelGridSpec& spec,
                                const SensorConfig& sensor, std::uint64_t rng_seed);

// Variant taking a precomputed area grid so the pipeline voxelizes once.
std::vector<Waveform> cast_rays(const TriangleMesh& mesh, const MaterialAreaGrid& areas,
                                const SensorConfig& sensor, std::uint64_t rng_seed);

struct VoxelFraction {
    std::uint64_t lin = 0;
    double f_scatter = 0.0;    // share of post-entry signal scattered inside the voxel
    double f_remaining = 0.0;  // share of total signal remaining past the voxel entry
    double path_length = 0.0;  // m traversed inside the voxel
};

// Per-voxel waveform fractions via exact integrals of the piecewise-linear
// interpolant; 0/0 is defined as 0 on signal-free intervals.
std::vector<VoxelFraction> voxel_fractions(const Waveform& wf, const VoxelGridSpec& spec);

class IntensityGrid {
public:
    IntensityGrid() = default;
    explicit IntensityGrid(const VoxelGridSpec& spec) : spec_(spec) {}

    const VoxelGridSpec& spec() const { return spec_; }

    struct Cell {
        double intensity = 0.0;
        std::uint32_t hits = 0;
    };

    const Cell* find(std::uint64_t lin) const;
    std::uint64_t occupied_count() const { return cells_.size(); }
    void for_each(const std::function<void(std::uint64_t, const Cell&)>& fn) const;
    void set(std::uint64_t lin, const Cell& cell) { cells_[lin] = cell; }

private:
    VoxelGridSpec spec_;
    std::map<std::uint64_t, Cell> cells_;
};

// Mean scattering density per voxel: average over intersecting rays of
// (f_scatter * f_remaining) / path_length. Order-independent.
IntensityGrid aggregate_intensity(const std::vector<std::vector<VoxelFraction>>& rays,
                                  const VoxelGridSpec& spec);

// cast + fractions + aggregate without retaining waveforms.
IntensityGrid simulate_intensity(const TriangleMesh& mesh, const MaterialAreaGrid& areas,
                                 const SensorConfig& sensor, std::uint64_t rng_seed);

// "VFW1" waveform dump: per-ray header {origin, direction, sample_count u32,
// dt f64} followed by binary32 samples.
void write_vfw1(const std::vector<Waveform>& rays, const std::string& path);
std::vector<Waveform> read_vfw1(const std::string& path);

// Intensity grid in the VXA1 header layout with one f64 channel + u32 hits.
void write_vxi1(const IntensityGrid& grid, const std::string& path);
IntensityGrid read_vxi1(const std::string& path);

}  // namespace vf
