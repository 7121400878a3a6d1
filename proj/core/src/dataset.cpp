#include "vforest/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "vforest/io.hpp"
#include "vforest/rng.hpp"

namespace vf {

namespace {

std::uint32_t sections_along(double extent, double section_size) {
    return static_cast<std::uint32_t>(std::max(1.0, std::ceil(extent / section_size - 1e-9)));
}

}  // namespace

std::uint32_t VoxelDataset::sections_x() const {
    return sections_along(spec.dims[0] * spec.voxel_size, section_size);
}

std::uint32_t VoxelDataset::sections_y() const {
    return sections_along(spec.dims[1] * spec.voxel_size, section_size);
}

VoxelDataset assemble_dataset(const std::vector<std::pair<std::uint64_t, TargetFractions>>& fractions,
                              const IntensityGrid& intensity, const VoxelGridSpec& spec,
                              double section_size) {
    if (section_size <= 0) throw ValidationError("section_size must be > 0");
    if (!(intensity.spec() == spec))
        throw ValidationError("area and intensity grids do not match");

    VoxelDataset ds;
    ds.spec = spec;
    ds.section_size = section_size;
    const std::uint32_t nsx = ds.sections_x();
    ds.rows.reserve(fractions.size());
    for (const auto& [lin, targets] : fractions) {
        DatasetRow row;
        row.coord = spec.coord(lin);
        row.position = spec.cell_center(row.coord);
        row.targets = targets;
        if (const auto* cell = intensity.find(lin)) row.intensity = cell->intensity;
        const auto sx = static_cast<std::uint32_t>((row.position.x - spec.origin.x) / section_size);
        const auto sy = static_cast<std::uint32_t>((row.position.y - spec.origin.y) / section_size);
        row.section = sy * nsx + sx;
        ds.rows.push_back(row);
    }
    return ds;
}

BlockSplit block_split(const VoxelDataset& dataset, double section_size, double test_fraction,
                       std::uint64_t seed) {
    if (section_size <= 0) throw ValidationError("section_size must be > 0");
    if (test_fraction < 0 || test_fraction >= 1)
        throw ValidationError("test_fraction must be in [0,1)");

    const double ex = dataset.spec.dims[0] * dataset.spec.voxel_size;
    const double ey = dataset.spec.dims[1] * dataset.spec.voxel_size;
    const std::uint32_t nsx = sections_along(ex, section_size);
    const std::uint32_t nsy = sections_along(ey, section_size);
    const std::uint32_t total = nsx * nsy;
    if (total < 2) throw ValidationError("scene extent yields fewer than 2 sections");

    std::vector<std::uint32_t> order(total);
    for (std::uint32_t i = 0; i < total; ++i) order[i] = i;
    Rng rng = Rng(seed).fork(0x5b17);
    for (std::uint32_t i = total; i > 1; --i)
        std::swap(order[i - 1], order[rng.next_below(i)]);

    const auto n_test = static_cast<std::uint32_t>(std::llround(test_fraction * total));
    BlockSplit split;
    std::vector<bool> is_test(total, false);
    for (std::uint32_t i = 0; i < total; ++i) {
        if (i < n_test) {
            is_test[order[i]] = true;
            split.test_sections.push_back(order[i]);
        } else {
            split.train_sections.push_back(order[i]);
        }
    }
    std::sort(split.train_sections.begin(), split.train_sections.end());
    std::sort(split.test_sections.begin(), split.test_sections.end());

    for (std::size_t i = 0; i < dataset.rows.size(); ++i) {
        const std::uint32_t sec = dataset.rows[i].section;
        if (sec >= total)
            throw ValidationError("dataset row references section outside the tiling");
        (is_test[sec] ? split.test_rows : split.train_rows).push_back(i);
    }
    return split;
}

void write_vxd1(const VoxelDataset& dataset, const std::string& path) {
    io::BinaryWriter w(path);
    const VoxelGridSpec& s = dataset.spec;
    w.magic("VXD1");
    w.f64(s.voxel_size);
    w.f64(s.origin.x);
    w.f64(s.origin.y);
    w.f64(s.origin.z);
    w.u32(s.dims[0]);
    w.u32(s.dims[1]);
    w.u32(s.dims[2]);
    w.f64(dataset.section_size);
    w.u64(dataset.rows.size());
    for (const DatasetRow& row : dataset.rows) {
        w.u32(row.coord.ix);
        w.u32(row.coord.iy);
        w.u32(row.coord.iz);
        w.f64(row.position.x);
        w.f64(row.position.y);
        w.f64(row.position.z);
        w.f64(row.intensity);
        for (int m = 0; m < kMaterialCount; ++m) w.f64(row.targets[m]);
        w.u32(row.section);
    }
    if (!w.good()) throw ComputeError("write failed: " + path);
}

VoxelDataset read_vxd1(const std::string& path) {
    io::BinaryReader r(path);
    r.expect_magic("VXD1");
    VoxelDataset ds;
    ds.spec.voxel_size = r.f64();
    ds.spec.origin = {r.f64(), r.f64(), r.f64()};
    ds.spec.dims = {r.u32(), r.u32(), r.u32()};
    ds.spec.validate();
    ds.section_size = r.f64();
    const std::uint64_t n = r.u64();
    ds.rows.resize(n);
    for (auto& row : ds.rows) {
        row.coord = {r.u32(), r.u32(), r.u32()};
        row.position = {r.f64(), r.f64(), r.f64()};
        row.intensity = r.f64();
        for (int m = 0; m < kMaterialCount; ++m) row.targets[m] = r.f64();
        row.section = r.u32();
    }
    return ds;
}

void write_dataset_csv(const VoxelDataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out << "ix,iy,iz,x,y,z,intensity,bark,leaf,soil,misc,section\n";
    for (const DatasetRow& row : dataset.rows) {
        out << row.coord.ix << ',' << row.coord.iy << ',' << row.coord.iz << ','
            << io::format_double(row.position.x) << ',' << io::format_double(row.position.y) << ','
            << io::format_double(row.position.z) << ',' << io::format_double(row.intensity);
        for (int m = 0; m < kMaterialCount; ++m) out << ',' << io::format_double(row.targets[m]);
        out << ',' << row.section << '\n';
    }
}

}  // namespace vf
