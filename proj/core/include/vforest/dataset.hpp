#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vforest/grid.hpp"
#include "vforest/lidar.hpp"
#include "vforest/voxelize.hpp"

namespace vf {

struct DatasetRow {
    VoxelCoord coord;
    Vec3 position;  // voxel center, meters
    double intensity = 0.0;
    TargetFractions targets{};
    std::uint32_t section = 0;
};

// The paper's (I, O) matrices: one row per occupied voxel.
struct VoxelDataset {
    VoxelGridSpec spec;
    double section_size = 100.0;
    std::vector<DatasetRow> rows;

    std::uint32_t sections_x() const;
    std::uint32_t sections_y() const;
    std::uint32_t section_count() const { return sections_x() * sections_y(); }
};

// Left join of ground-truth fractions with ray intensity on the voxel index;
// voxels without ray coverage keep intensity 0.
VoxelDataset assemble_dataset(const std::vector<std::pair<std::uint64_t, TargetFractions>>& fractions,
                              const IntensityGrid& intensity, const VoxelGridSpec& spec,
                              double section_size);

struct BlockSplit {
    std::vector<std::size_t> train_rows, test_rows;      // indices into dataset.rows
    std::vector<std::uint32_t> train_sections, test_sections;
};

// Whole x-y sections of `section_size` go to train or test via a seeded
// shuffle honoring test_fraction; every voxel inherits its section's side.
BlockSplit block_split(const VoxelDataset& dataset, double section_size, double test_fraction,
                       std::uint64_t seed);

// "VXD1": header {magic, voxel_size f64, origin 3xf64, dims 3xu32,
// section_size f64, row_count u64}, rows of {ix,iy,iz u32; x,y,z f64;
// intensity f64; targets 4xf64; section u32}.
void write_vxd1(const VoxelDataset& dataset, const std::string& path);
VoxelDataset read_vxd1(const std::string& path);

// CSV mirror: ix,iy,iz,x,y,z,intensity,bark,leaf,soil,misc,section
void write_dataset_csv(const VoxelDataset& dataset, const std::string& path);

}  // namespace vf
