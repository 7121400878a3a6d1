#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "vforest/dataset.hpp"
#include "vforest/loss.hpp"
#include "vforest/network.hpp"
#include "vforest/relevance.hpp"

namespace vf {

struct TrainConfig {
    int epochs = 60;
    int steps_per_epoch = 40;
    double learning_rate = 1e-2;
    double momentum = 0.98;
    double decay_per_100_epochs = 0.1;  // exponential learning-rate decay
    double divergence_threshold = 1e3;
    int max_sphere_points = 4000;
    std::uint64_t seed = 1;

    void validate() const;
    double lr_at_epoch(int epoch) const;
};

// Per-target relevance tables built from the training marginals. KDE falls
// back to DBR on zero variance; phi falls back to uniform weights on
// degenerate targets.
struct RelevanceSetup {
    RelevanceMethod method = RelevanceMethod::None;
    HistogramSpec spec;
    double merge_threshold = 0.0;  // >0 merges sparse bins before DBR
    std::array<std::optional<RelevanceTable>, kMaterialCount> tables;
    std::array<std::vector<std::uint64_t>, kMaterialCount> densities;

    static RelevanceSetup build(const VoxelDataset& dataset, const std::vector<std::size_t>& rows,
                                RelevanceMethod method, const HistogramSpec& spec,
                                double merge_threshold = 0.0);

    double weight_for(int target, double value) const;
};

struct TrainResult {
    std::uint64_t steps = 0;
    double final_total_loss = 0.0;
    bool diverged = false;
    std::vector<double> epoch_loss;  // mean total loss per epoch
};

// Momentum SGD over random training spheres; emits one JSON line per step to
// `log` when given. On divergence the last end-of-epoch parameters are
// restored and the result is flagged.
TrainResult train_network(KpNetwork& net, const VoxelDataset& dataset,
                          const std::vector<std::size_t>& train_rows,
                          const RelevanceSetup& relevance, const LossConfig& loss_cfg,
                          const TrainConfig& train_cfg, std::ostream* log = nullptr);

// All rows within `radius` of the given center, nearest-first, truncated to
// max_points. Used for both training batches and sphere-covering inference.
struct SphereIndex {
    explicit SphereIndex(const VoxelDataset& dataset, const std::vector<std::size_t>& rows,
                         double radius);
    std::vector<std::size_t> gather(const Vec3& center, int max_points) const;

private:
    const VoxelDataset& dataset_;
    double cell_;
    std::vector<std::size_t> rows_;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> cells_;
};

SphereBatch make_sphere_batch(const VoxelDataset& dataset, const std::vector<std::size_t>& members,
                              const Vec3& center);

}  // namespace vf
