#include "vforest/train.hpp"

#include <algorithm>
#include <cmath>

#include "vforest/rng.hpp"

namespace vf {

void TrainConfig::validate() const {
    if (epochs < 1 || steps_per_epoch < 1) throw ValidationError("epochs/steps must be >= 1");
    if (learning_rate < 0) throw ValidationError("learning_rate must be >= 0");
    if (momentum < 0 || momentum >= 1) throw ValidationError("momentum must be in [0,1)");
    if (decay_per_100_epochs <= 0 || decay_per_100_epochs > 1)
        throw ValidationError("decay_per_100_epochs must be in (0,1]");
    if (max_sphere_points < 8) throw ValidationError("max_sphere_points too small");
}

double TrainConfig::lr_at_epoch(int epoch) const {
    return learning_rate * std::pow(decay_per_100_epochs, static_cast<double>(epoch) / 100.0);
}

RelevanceSetup RelevanceSetup::build(const VoxelDataset& dataset,
                                     const std::vector<std::size_t>& rows, RelevanceMethod method,
                                     const HistogramSpec& spec, double merge_threshold) {
    RelevanceSetup setup;
    setup.method = method;
    setup.spec = spec;
    setup.merge_threshold = merge_threshold;
    if (rows.empty()) throw ValidationError("relevance setup needs a non-empty training split");

    for (int m = 0; m < kMaterialCount; ++m) {
        std::vector<double> values;
        values.reserve(rows.size());
        for (std::size_t r : rows) values.push_back(dataset.rows[r].targets[m]);
        setup.densities[m] = histogram(values, spec);
        if (method == RelevanceMethod::None) continue;
        try {
            switch (method) {
                case RelevanceMethod::DBR: {
                    auto d = setup.densities[m];
                    if (merge_threshold > 0) d = merge_sparse_bins(d, merge_threshold);
                    setup.tables[m] = dbr_weights(d, spec.bin_count);
                    break;
                }
                case RelevanceMethod::KDE:
                    setup.tables[m] = kde_weights(values, spec);
                    break;
                case RelevanceMethod::PHI:
                    setup.tables[m] = phi_relevance(values, spec);
                    break;
                default:
                    break;
            }
        } catch (const ValidationError&) {
            // Degenerate marginal: KDE falls back to DBR, phi to uniform.
            if (method == RelevanceMethod::KDE)
                setup.tables[m] = dbr_weights(setup.densities[m], spec.bin_count);
            else
                setup.tables[m].reset();
        }
    }
    return setup;
}

double RelevanceSetup::weight_for(int target, double value) const {
    if (!tables[target]) return 1.0;
    const RelevanceTable& table = *tables[target];
    const int j = spec.bin_of(value);
    if (j < static_cast<int>(table.masked.size()) && table.masked[j]) return 1.0;
    // Floor keeps batches of only zero-weight samples trainable.
    return std::max(table.bin_weights[j], 1e-6);
}

SphereIndex::SphereIndex(const VoxelDataset& dataset, const std::vector<std::size_t>& rows,
                         double radius)
    : dataset_(dataset), cell_(radius), rows_(rows) {
    if (radius <= 0) throw ValidationError("sphere radius must be > 0");
    for (std::uint32_t i = 0; i < rows_.size(); ++i) {
        const Vec3& p = dataset.rows[rows_[i]].position;
        const auto kx = static_cast<std::int64_t>(std::floor(p.x / cell_));
        const auto ky = static_cast<std::int64_t>(std::floor(p.y / cell_));
        const auto kz = static_cast<std::int64_t>(std::floor(p.z / cell_));
        const std::uint64_t key = Rng::mix64(static_cast<std::uint64_t>(kx)) ^
                                  Rng::mix64(static_cast<std::uint64_t>(ky) * 3 + 1) ^
                                  Rng::mix64(static_cast<std::uint64_t>(kz) * 7 + 2);
        cells_[key].push_back(i);
    }
}

std::vector<std::size_t> SphereIndex::gather(const Vec3& center, int max_points) const {
    std::vector<std::pair<double, std::size_t>> found;
    const auto cx = static_cast<std::int64_t>(std::floor(center.x / cell_));
    const auto cy = static_cast<std::int64_t>(std::floor(center.y / cell_));
    const auto cz = static_cast<std::int64_t>(std::floor(center.z / cell_));
    const double r2 = cell_ * cell_;
    for (std::int64_t dz = -1; dz <= 1; ++dz)
        for (std::int64_t dy = -1; dy <= 1; ++dy)
            for (std::int64_t dx = -1; dx <= 1; ++dx) {
                const std::uint64_t key =
                    Rng::mix64(static_cast<std::uint64_t>(cx + dx)) ^
                    Rng::mix64(static_cast<std::uint64_t>(cy + dy) * 3 + 1) ^
                    Rng::mix64(static_cast<std::uint64_t>(cz + dz) * 7 + 2);
                auto it = cells_.find(key);
                if (it == cells_.end()) continue;
                for (std::uint32_t i : it->second) {
                    const std::size_t row = rows_[i];
                    const double d2 = (dataset_.rows[row].position - center).norm2();
                    if (d2 <= r2) found.emplace_back(d2, row);
                }
            }
    std::sort(found.begin(), found.end());
    if (static_cast<int>(found.size()) > max_points) found.resize(max_points);
    std::vector<std::size_t> out;
    out.reserve(found.size());
    for (const auto& [d2, row] : found) out.push_back(row);
    return out;
}

SphereBatch make_sphere_batch(const VoxelDataset& dataset, const std::vector<std::size_t>& members,
                              const Vec3& center) {
    SphereBatch batch;
    batch.center = center;
    batch.positions.reserve(members.size());
    batch.intensity.reserve(members.size());
    for (std::size_t r : members) {
        batch.positions.push_back(dataset.rows[r].position);
        batch.intensity.push_back(dataset.rows[r].intensity);
    }
    return batch;
}

TrainResult train_network(KpNetwork& net, const VoxelDataset& dataset,
                          const std::vector<std::size_t>& train_rows,
                          const RelevanceSetup& relevance, const LossConfig& loss_cfg,
                          const TrainConfig& train_cfg, std::ostream* log) {
    train_cfg.validate();
    loss_cfg.validate();
    if (train_rows.empty()) throw ValidationError("train_network: empty training split");

    const double R = net.config.sphere_radius();
    SphereIndex index(dataset, train_rows, R);

    auto params = net.parameters();
    std::vector<std::vector<double>*> trainable;
    for (auto& p : params)
        if (p.trainable) trainable.push_back(p.data);
    std::vector<std::vector<double>> velocity(trainable.size());
    for (std::size_t i = 0; i < trainable.size(); ++i)
        velocity[i].assign(trainable[i]->size(), 0.0);

    auto snapshot_params = [&] {
        std::vector<std::vector<double>> snap(trainable.size());
        for (std::size_t i = 0; i < trainable.size(); ++i) snap[i] = *trainable[i];
        return snap;
    };
    auto restore_params = [&](const std::vector<std::vector<double>>& snap) {
        for (std::size_t i = 0; i < trainable.size(); ++i) *trainable[i] = snap[i];
    };
    std::vector<std::vector<double>> last_good = snapshot_params();

    const double reg_value = loss_cfg.reg_coefficient * net.regularizer();
    Rng batch_rng = Rng(train_cfg.seed).fork(0xba7c);

    TrainResult result;
    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        const double lr = train_cfg.lr_at_epoch(epoch);
        double epoch_loss = 0.0;
        for (int step = 0; step < train_cfg.steps_per_epoch; ++step) {
            const std::size_t center_row =
                train_rows[batch_rng.next_below(train_rows.size())];
            std::vector<std::size_t> members =
                index.gather(dataset.rows[center_row].position, train_cfg.max_sphere_points);
            if (members.empty()) continue;
            const SphereBatch batch =
                make_sphere_batch(dataset, members, dataset.rows[center_row].position);

            ForwardResult fwd = network_forward(net, batch, RunMode::Train);

            std::array<TargetChannel, kMaterialCount> channels;
            for (int m = 0; m < kMaterialCount; ++m) {
                auto& ch = channels[m];
                ch.targets.resize(members.size());
                ch.predictions.resize(members.size());
                ch.weights.resize(members.size());
                for (std::size_t i = 0; i < members.size(); ++i) {
                    const double o = dataset.rows[members[i]].targets[m];
                    ch.targets[i] = o;
                    ch.predictions[i] = fwd.probabilities[i * kMaterialCount + m];
                    ch.weights[i] = relevance.weight_for(m, o);
                }
            }
            const LossBreakdown breakdown = total_loss(channels, reg_value, loss_cfg);

            if (!std::isfinite(breakdown.total) || breakdown.total > train_cfg.divergence_threshold) {
                restore_params(last_good);
                result.diverged = true;
                result.final_total_loss = breakdown.total;
                if (log) *log << "{\"event\":\"diverged\",\"step\":" << result.steps << "}\n";
                return result;
            }

            std::vector<double> d_probs(members.size() * kMaterialCount, 0.0);
            for (int m = 0; m < kMaterialCount; ++m)
                for (std::size_t i = 0; i < members.size(); ++i)
                    d_probs[i * kMaterialCount + m] = breakdown.grad[m][i];

            const NetworkGrads grads = network_backward(net, fwd, d_probs);
            for (std::size_t i = 0; i < trainable.size(); ++i) {
                auto& v = velocity[i];
                auto& p = *trainable[i];
                const auto& g = grads.tensors[i];
                for (std::size_t k = 0; k < p.size(); ++k) {
                    v[k] = train_cfg.momentum * v[k] - lr * g[k];
                    p[k] += v[k];
                }
            }
            commit_batchnorm_stats(net, fwd);

            if (log) *log << breakdown.to_json(result.steps, lr) << '\n';
            epoch_loss += breakdown.total;
            result.final_total_loss = breakdown.total;
            ++result.steps;
        }
        result.epoch_loss.push_back(epoch_loss / train_cfg.steps_per_epoch);
        last_good = snapshot_params();
    }
    return result;
}

}  // namespace vf
