#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vforest/common.hpp"

namespace vf {

struct HistogramSpec {
    int bin_count = 100;  // equal-width bins over [0,1]

    void validate() const {
        if (bin_count < 2) throw ValidationError("histogram needs at least 2 bins");
    }
    // x = 1 maps to the last bin.
    int bin_of(double x) const {
        const int b = static_cast<int>(x * bin_count);
        return b >= bin_count ? bin_count - 1 : b;
    }
    double bin_center(int j) const { return (j + 0.5) / bin_count; }
};

enum class RelevanceMethod { None, DBR, KDE, PHI };

const char* relevance_method_name(RelevanceMethod m);
RelevanceMethod relevance_method_from_name(const std::string& name);

struct RelevanceTable {
    RelevanceMethod method = RelevanceMethod::DBR;
    std::vector<double> bin_weights;  // weight in [0,1] per bin; undefined where masked
    std::vector<bool> masked;         // true = empty bin, weight undefined
};

enum class BinRegion { Sparse, Moderate, Dense };

const char* bin_region_name(BinRegion r);

// Counts per bin; values must lie in [0,1] and the input must be non-empty.
std::vector<std::uint64_t> histogram(const std::vector<double>& values, const HistogramSpec& spec);

// Density-based relevance: f_j = d_j/sum(d)*100, w_j = (100/b)/f_j,
// gamma_j = sqrt(w_j / max(w)); empty bins are masked.
RelevanceTable dbr_weights(const std::vector<std::uint64_t>& densities, int bin_count);

// Optional preprocessing: merge non-empty bins whose density fraction is below
// `threshold` into their nearest non-empty neighbor before computing DBR.
std::vector<std::uint64_t> merge_sparse_bins(const std::vector<std::uint64_t>& densities,
                                             double threshold);

// Gaussian KDE with Scott's 1D bandwidth, evaluated at bin centers, then
// normalized and inverted: weight = 1 - pdf/max(pdf).
RelevanceTable kde_weights(const std::vector<double>& values, const HistogramSpec& spec);

// SMOTER-style relevance from adjusted-boxplot control points (median -> 0,
// whisker with outliers beyond -> 1) interpolated by a monotone cubic Hermite
// spline with flat tangents, evaluated at bin centers.
RelevanceTable phi_relevance(const std::vector<double>& values, const HistogramSpec& spec);

// Per-sample weights by bin lookup into `table`.
std::vector<double> sample_weights(const RelevanceTable& table, const std::vector<double>& values,
                                   const HistogramSpec& spec);

// Sparse (<1%), Moderate (1-5%, inclusive), Dense (>5%) by density fraction;
// empty bins are Sparse.
std::vector<BinRegion> bin_regions(const std::vector<std::uint64_t>& densities);

// CSV: bin_index,bin_center,density,weight,region
void write_relevance_csv(const RelevanceTable& table, const std::vector<std::uint64_t>& densities,
                         const HistogramSpec& spec, const std::string& path);

}  // namespace vf
