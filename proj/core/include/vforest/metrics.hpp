#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "vforest/dataset.hpp"
#include "vforest/network.hpp"
#include "vforest/relevance.hpp"

namespace vf {

struct RegionStat {
    std::uint64_t count = 0;
    std::optional<double> mae;  // absent when the region has no samples
};

struct BinErrorRow {
    int bin = 0;
    double bin_center = 0.0;
    std::uint64_t count = 0;
    double density = 0.0;
    std::optional<double> mean_abs_error;
};

struct EvalReport {
    std::uint64_t n = 0;
    RegionStat sparse, moderate, dense;
    double mae_overall = 0.0;
    std::vector<BinErrorRow> bins;
};

// Bins and regions come from the ground-truth marginal of `targets`;
// MAE_region pools samples whose target value falls in that region's bins.
EvalReport stratified_mae(const std::vector<double>& targets,
                          const std::vector<double>& predictions, const HistogramSpec& spec);

std::vector<BinErrorRow> per_bin_error(const std::vector<double>& targets,
                                       const std::vector<double>& predictions,
                                       const HistogramSpec& spec);

struct EvalOutputs {
    std::array<EvalReport, kMaterialCount> reports;
    // predictions aligned with the evaluated row-index order
    std::vector<std::array<double, kMaterialCount>> predictions;
};

// Deterministic sphere-covering inference over the given rows, then one
// report per target.
EvalOutputs evaluate_model(const KpNetwork& net, const VoxelDataset& dataset,
                           const std::vector<std::size_t>& rows, const HistogramSpec& spec);

// Constant prediction at the per-target mean of `fit_rows`; returns the MAE
// of that baseline over `eval_rows` per target.
std::array<double, kMaterialCount> mean_baseline_mae(const VoxelDataset& dataset,
                                                     const std::vector<std::size_t>& fit_rows,
                                                     const std::vector<std::size_t>& eval_rows);

// CSVs: target,region,count,mae and target,bin_center,density,mean_abs_error
void write_region_csv(const std::array<EvalReport, kMaterialCount>& reports,
                      const std::string& path);
void write_bin_error_csv(const std::array<EvalReport, kMaterialCount>& reports,
                         const std::string& path);
// JSON summary mirroring EvalReport.
std::string reports_to_json(const std::array<EvalReport, kMaterialCount>& reports);

}  // namespace vf
