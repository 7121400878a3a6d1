#include "vforest/relevance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "vforest/io.hpp"

namespace vf {

const char* relevance_method_name(RelevanceMethod m) {
    switch (m) {
        case RelevanceMethod::None: return "none";
        case RelevanceMethod::DBR: return "dbr";
        case RelevanceMethod::KDE: return "kde";
        case RelevanceMethod::PHI: return "phi";
    }
    return "none";
}

RelevanceMethod relevance_method_from_name(const std::string& name) {
    if (name == "none") return RelevanceMethod::None;
    if (name == "dbr") return RelevanceMethod::DBR;
    if (name == "kde") return RelevanceMethod::KDE;
    if (name == "phi") return RelevanceMethod::PHI;
    throw ValidationError("unknown relevance method: " + name);
}

const char* bin_region_name(BinRegion r) {
    switch (r) {
        case BinRegion::Sparse: return "sparse";
        case BinRegion::Moderate: return "moderate";
        case BinRegion::Dense: return "dense";
    }
    return "sparse";
}

std::vector<std::uint64_t> histogram(const std::vector<double>& values, const HistogramSpec& spec) {
    spec.validate();
    if (values.empty()) throw ValidationError("histogram: empty input");
    std::vector<std::uint64_t> d(spec.bin_count, 0);
    for (double v : values) {
        if (v < 0.0 || v > 1.0)
            throw ValidationError("histogram: value outside [0,1]: " + std::to_string(v));
        ++d[spec.bin_of(v)];
    }
    return d;
}

RelevanceTable dbr_weights(const std::vector<std::uint64_t>& densities, int bin_count) {
    if (static_cast<int>(densities.size()) != bin_count)
        throw ValidationError("dbr_weights: densities size does not match bin_count");
    const double total = std::accumulate(densities.begin(), densities.end(), 0.0);
    if (total <= 0.0) throw ValidationError("dbr_weights: all bins empty");

    RelevanceTable table;
    table.method = RelevanceMethod::DBR;
    table.bin_weights.assign(bin_count, 0.0);
    table.masked.assign(bin_count, true);

    const double uniform = 100.0 / bin_count;
    std::vector<double> w(bin_count, 0.0);
    double w_max = 0.0;
    for (int j = 0; j < bin_count; ++j) {
        if (densities[j] == 0) continue;
        const double f = densities[j] / total * 100.0;
        w[j] = uniform / f;
        w_max = std::max(w_max, w[j]);
    }
    for (int j = 0; j < bin_count; ++j) {
        if (densities[j] == 0) continue;
        table.masked[j] = false;
        table.bin_weights[j] = std::sqrt(w[j] / w_max);
    }
    return table;
}

std::vector<std::uint64_t> merge_sparse_bins(const std::vector<std::uint64_t>& densities,
                                             double threshold) {
    const double total = std::accumulate(densities.begin(), densities.end(), 0.0);
    std::vector<std::uint64_t> merged = densities;
    if (total <= 0.0 || threshold <= 0.0) return merged;
    const int b = static_cast<int>(densities.size());
    for (int j = 0; j < b; ++j) {
        if (merged[j] == 0 || merged[j] / total >= threshold) continue;
        // nearest non-empty neighbor, preferring the previous bin on ties
        int best = -1;
        for (int off = 1; off < b; ++off) {
            if (j - off >= 0 && merged[j - off] > 0) { best = j - off; break; }
            if (j + off < b && merged[j + off] > 0) { best = j + off; break; }
        }
        if (best >= 0) {
            merged[best] += merged[j];
            merged[j] = 0;
        }
    }
    return merged;
}

RelevanceTable kde_weights(const std::vector<double>& values, const HistogramSpec& spec) {
    spec.validate();
    const std::size_t n = values.size();
    if (n < 2) throw ValidationError("kde_weights: need at least 2 samples");

    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n - 1);
    if (var <= 0.0) throw ValidationError("kde_weights: zero sample variance, KDE undefined");

    // Scott's rule for 1D data.
    const double h = std::sqrt(var) * std::pow(static_cast<double>(n), -0.2);
    const double norm = 1.0 / (std::sqrt(2.0 * 3.14159265358979323846) * h * static_cast<double>(n));

    RelevanceTable table;
    table.method = RelevanceMethod::KDE;
    table.bin_weights.assign(spec.bin_count, 0.0);
    table.masked.assign(spec.bin_count, false);

    std::vector<double> pdf(spec.bin_count, 0.0);
    double pdf_max = 0.0;
    for (int j = 0; j < spec.bin_count; ++j) {
        const double x = spec.bin_center(j);
        double acc = 0.0;
        for (double v : values) {
            const double z = (x - v) / h;
            acc += std::exp(-0.5 * z * z);
        }
        pdf[j] = acc * norm;
        pdf_max = std::max(pdf_max, pdf[j]);
    }
    for (int j = 0; j < spec.bin_count; ++j)
        table.bin_weights[j] = 1.0 - pdf[j] / pdf_max;
    return table;
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
    // linear interpolation between order statistics (R type 7)
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

struct ControlPoint {
    double y;
    double relevance;
};

// Hermite segment with zero tangents: monotone smoothstep between the values.
double hermite_flat(double y0, double y1, double t) {
    const double s = t * t * (3.0 - 2.0 * t);
    return y0 + (y1 - y0) * s;
}

}  // namespace

RelevanceTable phi_relevance(const std::vector<double>& values, const HistogramSpec& spec) {
    spec.validate();
    if (values.size() < 5) throw ValidationError("phi_relevance: need at least 5 samples");

    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back())
        throw ValidationError("phi_relevance: degenerate input (all values equal)");

    const double q1 = quantile_sorted(sorted, 0.25);
    const double med = quantile_sorted(sorted, 0.50);
    const double q3 = quantile_sorted(sorted, 0.75);
    const double iqr = q3 - q1;
    const double fence_lo = q1 - 1.5 * iqr;
    const double fence_hi = q3 + 1.5 * iqr;

    // Whiskers: most extreme data inside the fences.
    double whisker_lo = sorted.front();
    double whisker_hi = sorted.back();
    for (double v : sorted) {
        if (v >= fence_lo) { whisker_lo = v; break; }
    }
    for (auto it = sorted.rbegin(); it != sorted.rend(); ++it) {
        if (*it <= fence_hi) { whisker_hi = *it; break; }
    }
    const bool out_lo = sorted.front() < fence_lo;
    const bool out_hi = sorted.back() > fence_hi;

    std::vector<ControlPoint> pts;
    pts.push_back(out_lo ? ControlPoint{whisker_lo, 1.0} : ControlPoint{sorted.front(), 0.0});
    pts.push_back({med, 0.0});
    pts.push_back(out_hi ? ControlPoint{whisker_hi, 1.0} : ControlPoint{sorted.back(), 0.0});

    // Collapse duplicated control-point locations (degenerate IQR). A rare
    // extreme coinciding with the median wins, matching the observed behavior
    // on mostly-zero targets where the whole range becomes fully relevant.
    std::vector<ControlPoint> unique_pts;
    for (const ControlPoint& p : pts) {
        if (!unique_pts.empty() && unique_pts.back().y == p.y) {
            unique_pts.back().relevance = std::max(unique_pts.back().relevance, p.relevance);
        } else {
            unique_pts.push_back(p);
        }
    }

    RelevanceTable table;
    table.method = RelevanceMethod::PHI;
    table.bin_weights.assign(spec.bin_count, 0.0);
    table.masked.assign(spec.bin_count, false);

    auto eval = [&](double y) {
        if (unique_pts.size() == 1) return unique_pts.front().relevance;
        if (y <= unique_pts.front().y) return unique_pts.front().relevance;
        if (y >= unique_pts.back().y) return unique_pts.back().relevance;
        for (std::size_t k = 0; k + 1 < unique_pts.size(); ++k) {
            const ControlPoint& a = unique_pts[k];
            const ControlPoint& b = unique_pts[k + 1];
            if (y <= b.y) {
                const double t = (y - a.y) / (b.y - a.y);
                return hermite_flat(a.relevance, b.relevance, t);
            }
        }
        return unique_pts.back().relevance;
    };

    for (int j = 0; j < spec.bin_count; ++j)
        table.bin_weights[j] = std::clamp(eval(spec.bin_center(j)), 0.0, 1.0);
    return table;
}

std::vector<double> sample_weights(const RelevanceTable& table, const std::vector<double>& values,
                                   const HistogramSpec& spec) {
    spec.validate();
    if (static_cast<int>(table.bin_weights.size()) != spec.bin_count)
        throw ValidationError("sample_weights: table bin count does not match histogram spec");
    std::vector<double> w;
    w.reserve(values.size());
    for (double v : values) {
        if (v < 0.0 || v > 1.0)
            throw ValidationError("sample_weights: value outside [0,1]: " + std::to_string(v));
        const int j = spec.bin_of(v);
        if (j < static_cast<int>(table.masked.size()) && table.masked[j])
            throw ComputeError("sample_weights: lookup hit a masked (empty) bin");
        w.push_back(table.bin_weights[j]);
    }
    return w;
}

std::vector<BinRegion> bin_regions(const std::vector<std::uint64_t>& densities) {
    const double total = std::accumulate(densities.begin(), densities.end(), 0.0);
    if (total <= 0.0) throw ValidationError("bin_regions: all bins empty");
    std::vector<BinRegion> regions(densities.size(), BinRegion::Sparse);
    for (std::size_t j = 0; j < densities.size(); ++j) {
        const double p = densities[j] / total;
        if (p < 0.01) regions[j] = BinRegion::Sparse;
        else if (p <= 0.05) regions[j] = BinRegion::Moderate;
        else regions[j] = BinRegion::Dense;
    }
    return regions;
}

void write_relevance_csv(const RelevanceTable& table, const std::vector<std::uint64_t>& densities,
                         const HistogramSpec& spec, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    const auto regions = bin_regions(densities);
    out << "bin_index,bin_center,density,weight,region\n";
    for (int j = 0; j < spec.bin_count; ++j) {
        out << j << ',' << io::format_double(spec.bin_center(j)) << ',' << densities[j] << ',';
        if (j < static_cast<int>(table.masked.size()) && table.masked[j]) out << "na";
        else out << io::format_double(table.bin_weights[j]);
        out << ',' << bin_region_name(regions[j]) << '\n';
    }
}

}  // namespace vf
