#include "vforest/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "vforest/io.hpp"
#include "vforest/train.hpp"

namespace vf {

std::vector<BinErrorRow> per_bin_error(const std::vector<double>& targets,
                                       const std::vector<double>& predictions,
                                       const HistogramSpec& spec) {
    if (targets.size() != predictions.size() || targets.empty())
        throw ValidationError("per_bin_error: need equal-length non-empty inputs");
    spec.validate();

    std::vector<BinErrorRow> rows(spec.bin_count);
    std::vector<double> err_sum(spec.bin_count, 0.0);
    for (int j = 0; j < spec.bin_count; ++j) {
        rows[j].bin = j;
        rows[j].bin_center = spec.bin_center(j);
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const int j = spec.bin_of(targets[i]);
        ++rows[j].count;
        err_sum[j] += std::fabs(targets[i] - predictions[i]);
    }
    const double n = static_cast<double>(targets.size());
    for (int j = 0; j < spec.bin_count; ++j) {
        rows[j].density = rows[j].count / n;
        if (rows[j].count > 0) rows[j].mean_abs_error = err_sum[j] / rows[j].count;
    }
    return rows;
}

EvalReport stratified_mae(const std::vector<double>& targets,
                          const std::vector<double>& predictions, const HistogramSpec& spec) {
    if (targets.size() != predictions.size() || targets.empty())
        throw ValidationError("stratified_mae: need equal-length non-empty inputs");
    for (double o : targets)
        if (o < 0.0 || o > 1.0)
            throw ValidationError("stratified_mae: target outside [0,1]");

    EvalReport report;
    report.n = targets.size();
    report.bins = per_bin_error(targets, predictions, spec);

    std::vector<std::uint64_t> densities(spec.bin_count, 0);
    for (int j = 0; j < spec.bin_count; ++j) densities[j] = report.bins[j].count;
    const std::vector<BinRegion> regions = bin_regions(densities);

    double sums[3] = {0, 0, 0};
    std::uint64_t counts[3] = {0, 0, 0};
    double total = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double e = std::fabs(targets[i] - predictions[i]);
        const int r = static_cast<int>(regions[spec.bin_of(targets[i])]);
        sums[r] += e;
        ++counts[r];
        total += e;
    }
    report.mae_overall = total / static_cast<double>(report.n);
    auto fill = [&](RegionStat& stat, int r) {
        stat.count = counts[r];
        if (counts[r] > 0) stat.mae = sums[r] / static_cast<double>(counts[r]);
    };
    fill(report.sparse, static_cast<int>(BinRegion::Sparse));
    fill(report.moderate, static_cast<int>(BinRegion::Moderate));
    fill(report.dense, static_cast<int>(BinRegion::Dense));
    return report;
}

EvalOutputs evaluate_model(const KpNetwork& net, const VoxelDataset& dataset,
                           const std::vector<std::size_t>& rows, const HistogramSpec& spec) {
    if (rows.empty()) throw ValidationError("evaluate_model: empty split");

    EvalOutputs out;
    out.predictions.assign(rows.size(), {});

    // position of each evaluated row within `rows`
    std::unordered_map<std::size_t, std::size_t> slot;
    slot.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) slot[rows[i]] = i;

    const double R = net.config.sphere_radius();
    SphereIndex index(dataset, rows, R);
    std::vector<bool> done(rows.size(), false);

    constexpr int kEvalSphereCap = 200000;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (done[i]) continue;
        const Vec3 center = dataset.rows[rows[i]].position;
        std::vector<std::size_t> members = index.gather(center, kEvalSphereCap);
        if (members.empty()) members.push_back(rows[i]);
        const SphereBatch batch = make_sphere_batch(dataset, members, center);
        const ForwardResult fwd = network_forward(net, batch, RunMode::Eval);
        for (std::size_t k = 0; k < members.size(); ++k) {
            const auto it = slot.find(members[k]);
            if (it == slot.end() || done[it->second]) continue;
            for (int m = 0; m < kMaterialCount; ++m)
                out.predictions[it->second][m] = fwd.probabilities[k * kMaterialCount + m];
            done[it->second] = true;
        }
    }

    for (int m = 0; m < kMaterialCount; ++m) {
        std::vector<double> o(rows.size()), p(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            o[i] = dataset.rows[rows[i]].targets[m];
            p[i] = out.predictions[i][m];
        }
        out.reports[m] = stratified_mae(o, p, spec);
    }
    return out;
}

std::array<double, kMaterialCount> mean_baseline_mae(const VoxelDataset& dataset,
                                                     const std::vector<std::size_t>& fit_rows,
                                                     const std::vector<std::size_t>& eval_rows) {
    if (fit_rows.empty() || eval_rows.empty())
        throw ValidationError("mean_baseline_mae: empty split");
    std::array<double, kMaterialCount> mean{};
    for (std::size_t r : fit_rows)
        for (int m = 0; m < kMaterialCount; ++m) mean[m] += dataset.rows[r].targets[m];
    for (int m = 0; m < kMaterialCount; ++m) mean[m] /= static_cast<double>(fit_rows.size());

    std::array<double, kMaterialCount> mae{};
    for (std::size_t r : eval_rows)
        for (int m = 0; m < kMaterialCount; ++m)
            mae[m] += std::fabs(dataset.rows[r].targets[m] - mean[m]);
    for (int m = 0; m < kMaterialCount; ++m) mae[m] /= static_cast<double>(eval_rows.size());
    return mae;
}

namespace {

std::string stat_str(const RegionStat& s) {
    return s.mae ? io::format_double(*s.mae) : "na";
}

}  // namespace

void write_region_csv(const std::array<EvalReport, kMaterialCount>& reports,
                      const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out << "target,region,count,mae\n";
    for (int m = 0; m < kMaterialCount; ++m) {
        const EvalReport& r = reports[m];
        const char* name = material_name(static_cast<Material>(m));
        out << name << ",sparse," << r.sparse.count << ',' << stat_str(r.sparse) << '\n';
        out << name << ",moderate," << r.moderate.count << ',' << stat_str(r.moderate) << '\n';
        out << name << ",dense," << r.dense.count << ',' << stat_str(r.dense) << '\n';
        out << name << ",overall," << r.n << ',' << io::format_double(r.mae_overall) << '\n';
    }
}

void write_bin_error_csv(const std::array<EvalReport, kMaterialCount>& reports,
                         const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out << "target,bin_center,density,mean_abs_error\n";
    for (int m = 0; m < kMaterialCount; ++m)
        for (const BinErrorRow& row : reports[m].bins) {
            out << material_name(static_cast<Material>(m)) << ','
                << io::format_double(row.bin_center) << ',' << io::format_double(row.density)
                << ',' << (row.mean_abs_error ? io::format_double(*row.mean_abs_error) : "na")
                << '\n';
        }
}

std::string reports_to_json(const std::array<EvalReport, kMaterialCount>& reports) {
    std::ostringstream os;
    os << "{";
    for (int m = 0; m < kMaterialCount; ++m) {
        const EvalReport& r = reports[m];
        if (m) os << ",";
        os << "\"" << material_name(static_cast<Material>(m)) << "\":{";
        auto region = [&](const char* name, const RegionStat& s) {
            os << "\"" << name << "\":{\"count\":" << s.count << ",\"mae\":"
               << (s.mae ? io::format_double(*s.mae) : "null") << "}";
        };
        region("sparse", r.sparse);
        os << ",";
        region("moderate", r.moderate);
        os << ",";
        region("dense", r.dense);
        os << ",\"overall\":{\"count\":" << r.n << ",\"mae\":" << io::format_double(r.mae_overall)
           << "}}";
    }
    os << "}";
    return os.str();
}

}  // namespace vf
