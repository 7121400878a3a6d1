#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vforest/dataset.hpp"
#include "vforest/loss.hpp"
#include "vforest/metrics.hpp"
#include "vforest/network.hpp"
#include "vforest/scenegen.hpp"
#include "vforest/train.hpp"

namespace vf {

struct SplitConfig {
    double section_size = 100.0;
    double test_fraction = 10.0 / 35.0;
    double holdout_fraction = 0.0;  // share of training sections held out

    void validate() const;
};

// Versioned JSON schema "vf-config/1".
struct RunConfig {
    SceneConfig scene;
    std::vector<double> voxel_sizes{1.0};
    double min_area = 1e-6;
    bool exact_ground_truth = false;  // clip instead of sample for ground truth
    SensorConfig sensor;
    RelevanceMethod relevance_method = RelevanceMethod::DBR;
    HistogramSpec histogram;
    double merge_threshold = 0.0;
    LossConfig loss;
    NetworkConfig network;  // voxel_size is overridden per run
    TrainConfig train;
    SplitConfig split;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    // ablation value lists
    std::vector<int> ablate_kernel_points{7, 15};
    std::vector<double> ablate_sphere_radii;  // empty = {R, 1.5R}

    void validate() const;
    std::string to_json() const;
    static RunConfig from_json_text(const std::string& text);
    static RunConfig load(const std::string& path);
    // content hash over the canonical JSON; prefixes the run directory
    std::string content_hash() const;
};

struct ManifestEntry {
    double voxel_size = 0.0;
    std::uint64_t train_rows = 0, test_rows = 0;
    std::vector<std::uint32_t> train_sections, test_sections, holdout_sections;
    std::array<std::vector<std::uint64_t>, kMaterialCount> target_histograms;  // train split
    std::map<std::string, std::string> files;
    std::map<std::string, std::uint64_t> checksums;
    std::map<std::string, std::uint64_t> row_counts;
};

std::string manifest_to_json(const std::vector<ManifestEntry>& entries);
// Re-reads each file and checks row counts and checksums against the entry.
void verify_manifest_entry(const ManifestEntry& entry);

struct StageResult {
    VoxelDataset dataset;
    BlockSplit split;
    ManifestEntry manifest;
};

// mesh -> areas -> intensity -> joined dataset (+ files when out_dir set).
StageResult build_stage(const TriangleMesh& mesh, const RunConfig& cfg, double voxel_size,
                        const std::string& out_dir = "");

struct RunOutcome {
    double voxel_size = 0.0;
    std::array<EvalReport, kMaterialCount> reports;
    std::array<double, kMaterialCount> baseline_mae{};
    bool trained = false;
    std::string error;  // non-empty when this run failed
};

// Full build/split/train/eval for one voxel size.
RunOutcome run_single(const TriangleMesh& mesh, const RunConfig& cfg, double voxel_size,
                      const std::string& out_dir, KpNetwork* trained_net = nullptr);

// Sensitivity sweep over cfg.voxel_sizes; failures are isolated per size.
std::vector<RunOutcome> sweep_voxel_sizes(const RunConfig& cfg, const std::string& out_dir);

void write_sweep_csv(const std::vector<RunOutcome>& outcomes, const std::string& path);

enum class AblationAxis { LossMetric, Weighting, FocalR, KernelPoints, SphereRadius };

AblationAxis ablation_axis_from_name(const std::string& name);

struct AblationRow {
    std::string axis, value;
    std::array<EvalReport, kMaterialCount> reports;
};

std::vector<AblationRow> ablate(const RunConfig& cfg, AblationAxis axis,
                                const std::string& out_dir);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path);

struct BenchRow {
    std::string name;
    std::size_t parameter_count = 0;
    double mean_batch_ms = 0.0;
    int batches = 0;
    int points_per_batch = 0;
};

// Mean wall time of a full training step (forward + loss + backward + update)
// on synthetic spheres; the first `warmup` batches are excluded.
std::vector<BenchRow> bench(const RunConfig& cfg, int batches, int points_per_batch,
                            int warmup = 10);

void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path);

// Relevance tables, target histograms and (optionally) per-bin error CSVs for
// external plotting.
void export_plots(const VoxelDataset& dataset, const RunConfig& cfg, const std::string& out_dir,
                  const KpNetwork* net = nullptr);

std::string make_run_dir(const RunConfig& cfg);

}  // namespace vf
