#include "vforest/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vforest/io.hpp"
#include "vforest/rng.hpp"

#include "json.hpp"

namespace vf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string size_tag(double voxel_size) {
    std::ostringstream os;
    os << voxel_size;
    std::string s = os.str();
    for (char& c : s)
        if (c == '.') c = 'p';
    return s;
}

void note_file(ManifestEntry& entry, const std::string& kind, const std::string& path,
               std::uint64_t rows) {
    entry.files[kind] = path;
    entry.checksums[kind] = io::file_checksum(path);
    entry.row_counts[kind] = rows;
}

}  // namespace

StageResult build_stage(const TriangleMesh& mesh, const RunConfig& cfg, double voxel_size,
                        const std::string& out_dir) {
    Aabb box;
    box.expand({0, 0, 0});
    box.expand(cfg.scene.extent);
    const VoxelGridSpec spec = VoxelGridSpec::covering(box, voxel_size, {0, 0, 0});

    MaterialAreaGrid areas = cfg.exact_ground_truth ? voxelize_exact(mesh, spec)
                                                    : voxelize_sampled(mesh, spec, cfg.seed);
    const auto fractions = areas_to_fractions(areas, cfg.min_area);
    const IntensityGrid intensity = simulate_intensity(mesh, areas, cfg.sensor, cfg.seed);

    StageResult stage;
    stage.dataset = assemble_dataset(fractions, intensity, spec, cfg.split.section_size);
    stage.split = block_split(stage.dataset, cfg.split.section_size, cfg.split.test_fraction,
                              cfg.seed);

    // Optional holdout: whole sections taken off the training side.
    if (cfg.split.holdout_fraction > 0 && stage.split.train_sections.size() > 1) {
        const auto n_hold = static_cast<std::size_t>(
            std::llround(cfg.split.holdout_fraction * stage.split.train_sections.size()));
        std::vector<std::uint32_t> order = stage.split.train_sections;
        Rng rng = Rng(cfg.seed).fork(0x401d);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.next_below(i)]);
        std::vector<bool> hold(stage.dataset.section_count(), false);
        for (std::size_t i = 0; i < n_hold && i < order.size(); ++i) {
            hold[order[i]] = true;
            stage.manifest.holdout_sections.push_back(order[i]);
        }
        std::vector<std::size_t> kept;
        for (std::size_t r : stage.split.train_rows)
            if (!hold[stage.dataset.rows[r].section]) kept.push_back(r);
        stage.split.train_rows = std::move(kept);
        std::sort(stage.manifest.holdout_sections.begin(), stage.manifest.holdout_sections.end());
    }

    ManifestEntry& entry = stage.manifest;
    entry.voxel_size = voxel_size;
    entry.train_rows = stage.split.train_rows.size();
    entry.test_rows = stage.split.test_rows.size();
    entry.train_sections = stage.split.train_sections;
    entry.test_sections = stage.split.test_sections;
    for (int m = 0; m < kMaterialCount; ++m) {
        std::vector<double> values;
        values.reserve(stage.split.train_rows.size());
        for (std::size_t r : stage.split.train_rows)
            values.push_back(stage.dataset.rows[r].targets[m]);
        if (!values.empty()) entry.target_histograms[m] = histogram(values, cfg.histogram);
    }

    if (!out_dir.empty()) {
        const std::string tag = size_tag(voxel_size);
        const std::string vxa = out_dir + "/areas_" + tag + ".vxa";
        write_vxa1(areas, vxa);
        note_file(entry, "areas", vxa, areas.occupied_count());
        const std::string vxi = out_dir + "/intensity_" + tag + ".vxi";
        write_vxi1(intensity, vxi);
        note_file(entry, "intensity", vxi, intensity.occupied_count());
        const std::string vxd = out_dir + "/dataset_" + tag + ".vxd";
        write_vxd1(stage.dataset, vxd);
        note_file(entry, "dataset", vxd, stage.dataset.rows.size());
        const std::string csv = out_dir + "/dataset_" + tag + ".csv";
        write_dataset_csv(stage.dataset, csv);
        note_file(entry, "dataset_csv", csv, stage.dataset.rows.size());
    }
    return stage;
}

std::string manifest_to_json(const std::vector<ManifestEntry>& entries) {
    json out = json::array();
    for (const ManifestEntry& e : entries) {
        json j;
        j["voxel_size"] = e.voxel_size;
        j["train_rows"] = e.train_rows;
        j["test_rows"] = e.test_rows;
        j["train_sections"] = e.train_sections;
        j["test_sections"] = e.test_sections;
        j["holdout_sections"] = e.holdout_sections;
        for (int m = 0; m < kMaterialCount; ++m)
            j["histograms"][material_name(static_cast<Material>(m))] = e.target_histograms[m];
        j["files"] = e.files;
        json sums;
        for (const auto& [k, v] : e.checksums) sums[k] = v;
        j["checksums"] = sums;
        json rows;
        for (const auto& [k, v] : e.row_counts) rows[k] = v;
        j["row_counts"] = rows;
        out.push_back(std::move(j));
    }
    return out.dump(2);
}

void verify_manifest_entry(const ManifestEntry& entry) {
    for (const auto& [kind, path] : entry.files) {
        const std::uint64_t sum = io::file_checksum(path);
        if (sum != entry.checksums.at(kind))
            throw ComputeError("manifest checksum mismatch for " + path);
        if (kind == "dataset") {
            const VoxelDataset ds = read_vxd1(path);
            if (ds.rows.size() != entry.row_counts.at(kind))
                throw ComputeError("manifest row count mismatch for " + path);
        }
    }
}

namespace {

struct TrainEval {
    std::array<EvalReport, kMaterialCount> reports;
    std::array<double, kMaterialCount> baseline{};
    KpNetwork net;
};

TrainEval train_and_eval(const VoxelDataset& dataset, const BlockSplit& split,
                         const RunConfig& cfg, double voxel_size, const std::string& out_dir,
                         const std::string& tag) {
    NetworkConfig net_cfg = cfg.network;
    net_cfg.voxel_size = voxel_size;

    TrainEval te{.reports = {}, .baseline = {}, .net = KpNetwork::build(net_cfg, cfg.seed)};

    const RelevanceSetup relevance = RelevanceSetup::build(
        dataset, split.train_rows, cfg.relevance_method, cfg.histogram, cfg.merge_threshold);

    std::ofstream log;
    if (!out_dir.empty()) log.open(out_dir + "/train_log_" + tag + ".jsonl");
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    const TrainResult tr = train_network(te.net, dataset, split.train_rows, relevance, cfg.loss,
                                         tc, log.is_open() ? &log : nullptr);
    if (tr.diverged) throw ComputeError("training diverged for voxel size " + tag);

    if (!out_dir.empty()) save_checkpoint(te.net, out_dir + "/checkpoint_" + tag + ".vfk");

    const std::vector<std::size_t>& eval_rows =
        split.test_rows.empty() ? split.train_rows : split.test_rows;
    const EvalOutputs outputs = evaluate_model(te.net, dataset, eval_rows, cfg.histogram);
    te.reports = outputs.reports;
    te.baseline = mean_baseline_mae(dataset, split.train_rows, eval_rows);

    if (!out_dir.empty()) {
        write_region_csv(outputs.reports, out_dir + "/eval_regions_" + tag + ".csv");
        write_bin_error_csv(outputs.reports, out_dir + "/eval_bins_" + tag + ".csv");
        std::ofstream js(out_dir + "/eval_summary_" + tag + ".json");
        js << reports_to_json(outputs.reports) << '\n';

        // per-voxel absolute errors for rendering error maps
        std::ofstream dump(out_dir + "/abs_error_" + tag + ".csv");
        dump << "ix,iy,iz,bark_abs_error,leaf_abs_error,soil_abs_error,misc_abs_error\n";
        for (std::size_t i = 0; i < eval_rows.size(); ++i) {
            const DatasetRow& row = dataset.rows[eval_rows[i]];
            dump << row.coord.ix << ',' << row.coord.iy << ',' << row.coord.iz;
            for (int m = 0; m < kMaterialCount; ++m)
                dump << ','
                     << io::format_double(std::fabs(row.targets[m] - outputs.predictions[i][m]));
            dump << '\n';
        }
    }
    return te;
}

}  // namespace

RunOutcome run_single(const TriangleMesh& mesh, const RunConfig& cfg, double voxel_size,
                      const std::string& out_dir, KpNetwork* trained_net) {
    RunOutcome outcome;
    outcome.voxel_size = voxel_size;
    const StageResult stage = build_stage(mesh, cfg, voxel_size, out_dir);
    TrainEval te = train_and_eval(stage.dataset, stage.split, cfg, voxel_size, out_dir,
                                  size_tag(voxel_size));
    outcome.reports = te.reports;
    outcome.baseline_mae = te.baseline;
    outcome.trained = true;
    if (trained_net) *trained_net = std::move(te.net);
    return outcome;
}

std::vector<RunOutcome> sweep_voxel_sizes(const RunConfig& cfg, const std::string& out_dir) {
    const TriangleMesh mesh = generate_scene(cfg.scene);
    std::vector<RunOutcome> outcomes;
    std::vector<ManifestEntry> manifest;
    for (double size : cfg.voxel_sizes) {
        RunOutcome outcome;
        outcome.voxel_size = size;
        try {
            const StageResult stage = build_stage(mesh, cfg, size, out_dir);
            manifest.push_back(stage.manifest);
            TrainEval te = train_and_eval(stage.dataset, stage.split, cfg, size, out_dir,
                                          size_tag(size));
            outcome.reports = te.reports;
            outcome.baseline_mae = te.baseline;
            outcome.trained = true;
        } catch (const std::exception& e) {
            outcome.error = e.what();  // isolate per-size failures, keep sweeping
        }
        outcomes.push_back(std::move(outcome));
    }
    if (!out_dir.empty()) {
        std::ofstream mf(out_dir + "/manifest.json");
        mf << manifest_to_json(manifest) << '\n';
        write_sweep_csv(outcomes, out_dir + "/sweep.csv");
    }
    return outcomes;
}

namespace {

std::string stat_or_na(const RegionStat& s) {
    return s.mae ? io::format_double(*s.mae) : "na";
}

}  // namespace

void write_sweep_csv(const std::vector<RunOutcome>& outcomes, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out << "voxel_size,target,mae_sparse,mae_moderate,mae_dense,mae_overall,error\n";
    for (const RunOutcome& o : outcomes) {
        for (int m = 0; m < kMaterialCount; ++m) {
            out << io::format_double(o.voxel_size) << ','
                << material_name(static_cast<Material>(m)) << ',';
            if (o.trained) {
                const EvalReport& r = o.reports[m];
                out << stat_or_na(r.sparse) << ',' << stat_or_na(r.moderate) << ','
                    << stat_or_na(r.dense) << ',' << io::format_double(r.mae_overall) << ',';
            } else {
                out << "na,na,na,na,";
            }
            out << (o.error.empty() ? "" : o.error) << '\n';
        }
    }
}

AblationAxis ablation_axis_from_name(const std::string& name) {
    if (name == "loss_metric") return AblationAxis::LossMetric;
    if (name == "weighting") return AblationAxis::Weighting;
    if (name == "focalr") return AblationAxis::FocalR;
    if (name == "K" || name == "kernel_points") return AblationAxis::KernelPoints;
    if (name == "R" || name == "sphere_radius") return AblationAxis::SphereRadius;
    throw ValidationError("unknown ablation axis: " + name +
                          " (use loss_metric|weighting|focalr|K|R)");
}

std::vector<AblationRow> ablate(const RunConfig& cfg, AblationAxis axis,
                                const std::string& out_dir) {
    const TriangleMesh mesh = generate_scene(cfg.scene);
    const double voxel_size = cfg.voxel_sizes.front();
    const StageResult stage = build_stage(mesh, cfg, voxel_size, out_dir);

    struct Variant {
        std::string value;
        RunConfig cfg;
    };
    std::vector<Variant> variants;
    auto base = cfg;
    switch (axis) {
        case AblationAxis::LossMetric: {
            base.loss.regression_metric = RegressionMetric::MSE;
            variants.push_back({"mse", base});
            base.loss.regression_metric = RegressionMetric::L1;
            variants.push_back({"l1", base});
            break;
        }
        case AblationAxis::Weighting: {
            for (RelevanceMethod m : {RelevanceMethod::None, RelevanceMethod::DBR,
                                      RelevanceMethod::KDE, RelevanceMethod::PHI}) {
                base.relevance_method = m;
                variants.push_back({relevance_method_name(m), base});
            }
            break;
        }
        case AblationAxis::FocalR: {
            base.loss.focalr_enabled = false;
            variants.push_back({"off", base});
            base.loss.focalr_enabled = true;
            variants.push_back({"on", base});
            break;
        }
        case AblationAxis::KernelPoints: {
            for (int k : cfg.ablate_kernel_points) {
                base.network.kernel_points = k;
                variants.push_back({std::to_string(k), base});
            }
            break;
        }
        case AblationAxis::SphereRadius: {
            std::vector<double> radii = cfg.ablate_sphere_radii;
            if (radii.empty()) {
                NetworkConfig nc = cfg.network;
                nc.voxel_size = voxel_size;
                radii = {nc.sphere_radius(), 1.5 * nc.sphere_radius()};
            }
            for (double r : radii) {
                base.network.input_sphere_radius = r;
                variants.push_back({io::format_double(r), base});
            }
            break;
        }
    }
    if (variants.empty()) throw ValidationError("ablation axis has no values");

    const char* axis_name = nullptr;
    switch (axis) {
        case AblationAxis::LossMetric: axis_name = "loss_metric"; break;
        case AblationAxis::Weighting: axis_name = "weighting"; break;
        case AblationAxis::FocalR: axis_name = "focalr"; break;
        case AblationAxis::KernelPoints: axis_name = "K"; break;
        case AblationAxis::SphereRadius: axis_name = "R"; break;
    }

    std::vector<AblationRow> rows;
    for (const Variant& variant : variants) {
        AblationRow row;
        row.axis = axis_name;
        row.value = variant.value;
        const std::string tag = std::string(axis_name) + "_" + variant.value;
        TrainEval te =
            train_and_eval(stage.dataset, stage.split, variant.cfg, voxel_size, out_dir, tag);
        row.reports = te.reports;
        rows.push_back(std::move(row));
    }
    if (!out_dir.empty()) write_ablation_csv(rows, out_dir + "/ablation.csv");
    return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out << "axis,value,target,mae_sparse,mae_dense\n";
    for (const AblationRow& row : rows)
        for (int m = 0; m < kMaterialCount; ++m)
            out << row.axis << ',' << row.value << ',' << material_name(static_cast<Material>(m))
                << ',' << stat_or_na(row.reports[m].sparse) << ','
                << stat_or_na(row.reports[m].dense) << '\n';
}

std::vector<BenchRow> bench(const RunConfig& cfg, int batches, int points_per_batch, int warmup) {
    if (batches < 1 || points_per_batch < 1) throw ValidationError("bench needs positive sizes");

    struct NamedCfg {
        std::string name;
        NetworkConfig cfg;
    };
    NetworkConfig base = cfg.network;
    base.voxel_size = cfg.voxel_sizes.front();
    NetworkConfig doubled = base;
    doubled.base_channels *= 2;
    const std::vector<NamedCfg> configs = {{"base", base}, {"double_channels", doubled}};

    std::vector<BenchRow> rows;
    for (const NamedCfg& nc : configs) {
        KpNetwork net = KpNetwork::build(nc.cfg, cfg.seed);
        auto params = net.parameters();
        std::vector<std::vector<double>*> trainable;
        for (auto& p : params)
            if (p.trainable) trainable.push_back(p.data);
        std::vector<std::vector<double>> velocity(trainable.size());
        for (std::size_t i = 0; i < trainable.size(); ++i)
            velocity[i].assign(trainable[i]->size(), 0.0);

        // synthetic sphere batch
        Rng rng = Rng(cfg.seed).fork(0xbe9c);
        const double R = nc.cfg.sphere_radius();
        SphereBatch batch;
        batch.center = {0, 0, 0};
        std::array<TargetChannel, kMaterialCount> channels;
        for (int i = 0; i < points_per_batch; ++i) {
            batch.positions.push_back(rng.in_unit_sphere() * R);
            batch.intensity.push_back(rng.next_double());
        }
        for (int m = 0; m < kMaterialCount; ++m) {
            channels[m].targets.resize(points_per_batch);
            channels[m].weights.assign(points_per_batch, 1.0);
            channels[m].predictions.resize(points_per_batch);
        }
        for (int i = 0; i < points_per_batch; ++i) {
            double raw[kMaterialCount], sum = 0.0;
            for (double& v : raw) {
                v = rng.next_double();
                sum += v;
            }
            for (int m = 0; m < kMaterialCount; ++m) channels[m].targets[i] = raw[m] / sum;
        }

        const double reg_value = cfg.loss.reg_coefficient * net.regularizer();
        double elapsed_ms = 0.0;
        int timed = 0;
        for (int b = 0; b < batches; ++b) {
            const auto start = std::chrono::steady_clock::now();
            ForwardResult fwd = network_forward(net, batch, RunMode::Train);
            for (int m = 0; m < kMaterialCount; ++m)
                for (int i = 0; i < points_per_batch; ++i)
                    channels[m].predictions[i] = fwd.probabilities[i * kMaterialCount + m];
            const LossBreakdown breakdown = total_loss(channels, reg_value, cfg.loss);
            std::vector<double> d_probs(static_cast<std::size_t>(points_per_batch) * kMaterialCount);
            for (int m = 0; m < kMaterialCount; ++m)
                for (int i = 0; i < points_per_batch; ++i)
                    d_probs[i * kMaterialCount + m] = breakdown.grad[m][i];
            const NetworkGrads grads = network_backward(net, fwd, d_probs);
            const double lr = 1e-3;
            for (std::size_t t = 0; t < trainable.size(); ++t)
                for (std::size_t k = 0; k < trainable[t]->size(); ++k) {
                    velocity[t][k] = 0.98 * velocity[t][k] - lr * grads.tensors[t][k];
                    (*trainable[t])[k] += velocity[t][k];
                }
            commit_batchnorm_stats(net, fwd);
            const auto end = std::chrono::steady_clock::now();
            if (b >= warmup) {
                elapsed_ms += std::chrono::duration<double, std::milli>(end - start).count();
                ++timed;
            }
        }
        BenchRow row;
        row.name = nc.name;
        row.parameter_count = net.parameter_count();
        row.mean_batch_ms = timed > 0 ? elapsed_ms / timed : 0.0;
        row.batches = batches;
        row.points_per_batch = points_per_batch;
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out << "config,parameters,mean_batch_ms,batches,points_per_batch\n";
    for (const BenchRow& row : rows)
        out << row.name << ',' << row.parameter_count << ','
            << io::format_double(row.mean_batch_ms) << ',' << row.batches << ','
            << row.points_per_batch << '\n';
}

void export_plots(const VoxelDataset& dataset, const RunConfig& cfg, const std::string& out_dir,
                  const KpNetwork* net) {
    std::vector<std::size_t> all_rows(dataset.rows.size());
    for (std::size_t i = 0; i < all_rows.size(); ++i) all_rows[i] = i;
    if (all_rows.empty()) throw ValidationError("export_plots: empty dataset");

    for (int m = 0; m < kMaterialCount; ++m) {
        std::vector<double> values;
        values.reserve(all_rows.size());
        for (const DatasetRow& row : dataset.rows) values.push_back(row.targets[m]);
        const auto densities = histogram(values, cfg.histogram);
        const std::string target = material_name(static_cast<Material>(m));

        write_relevance_csv(dbr_weights(densities, cfg.histogram.bin_count), densities,
                            cfg.histogram, out_dir + "/relevance_dbr_" + target + ".csv");
        try {
            write_relevance_csv(kde_weights(values, cfg.histogram), densities, cfg.histogram,
                                out_dir + "/relevance_kde_" + target + ".csv");
        } catch (const ValidationError&) {
        }
        try {
            write_relevance_csv(phi_relevance(values, cfg.histogram), densities, cfg.histogram,
                                out_dir + "/relevance_phi_" + target + ".csv");
        } catch (const ValidationError&) {
        }
    }
    if (net) {
        const EvalOutputs outputs = evaluate_model(*net, dataset, all_rows, cfg.histogram);
        write_bin_error_csv(outputs.reports, out_dir + "/eval_bins_full.csv");
        write_region_csv(outputs.reports, out_dir + "/eval_regions_full.csv");
    }
}

std::string make_run_dir(const RunConfig& cfg) {
    const std::string dir = cfg.out_dir + "/" + cfg.content_hash();
    fs::create_directories(dir);
    return dir;
}

}  // namespace vf
