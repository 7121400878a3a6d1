#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vforest/kpconv.hpp"
#include "vforest/mesh.hpp"

namespace vf {

struct NetworkConfig {
    int stages = 4;
    int base_channels = 64;
    int kernel_points = 15;
    double voxel_size = 1.0;
    // Derived defaults (0 = derive): first conv radius 2.5 * voxel_size,
    // first subsampling cell equal to it, both doubling per stage.
    double first_radius = 0.0;
    double first_subsample_dl = 0.0;
    double input_sphere_radius = 0.0;  // R; default 10 * voxel_size
    double sigma_ratio = 0.3;          // sigma = ratio * layer radius
    int max_neighbors = 40;
    bool rigid = true;

    double radius_at(int stage) const;
    double dl_at(int stage) const;  // subsampling cell entering level stage+1
    double sphere_radius() const;
    void validate() const;
};

// Checkpoint-able named tensor view.
struct ParamRef {
    std::string name;
    std::vector<double>* data;
    bool trainable;
};

class KpNetwork {
public:
    struct ConvBlock {
        KpconvLayer conv;
        BatchNorm bn;
    };

    NetworkConfig config;
    KernelLayout unit_layout;            // shared unit-sphere disposition
    std::vector<ConvBlock> encoder_conv;  // one per stage
    std::vector<UnaryBlock> encoder_unary;
    std::vector<UnaryBlock> decoder_unary;  // applied coarsest-first
    std::vector<double> head_weights;       // [base][4]
    std::vector<double> head_bias;          // [4]

    static KpNetwork build(const NetworkConfig& cfg, std::uint64_t rng_seed);

    std::vector<ParamRef> parameters();  // stable order
    std::size_t parameter_count() const; // trainable scalars
    double regularizer() const { return kernel_repulsion(unit_layout); }

    int encoder_channels(int stage) const { return config.base_channels << stage; }
};

// One training/inference sphere: all rows within R of `center`.
struct SphereBatch {
    Vec3 center;
    std::vector<Vec3> positions;   // absolute; the network recenters internally
    std::vector<double> intensity;
};

enum class RunMode { Train, Eval };

struct ForwardTape;  // opaque; defined in network.cpp

struct ForwardResult {
    std::vector<double> probabilities;  // [N][4], rows sum to 1
    std::shared_ptr<ForwardTape> tape;
};

ForwardResult network_forward(const KpNetwork& net, const SphereBatch& batch, RunMode mode);

// Gradient tensors aligned with KpNetwork::parameters() order.
struct NetworkGrads {
    std::vector<std::vector<double>> tensors;
};

// d(loss)/d(probabilities) in, parameter gradients out.
NetworkGrads network_backward(const KpNetwork& net, const ForwardResult& forward,
                              const std::vector<double>& d_probabilities);

// Commit the batch-norm running statistics saved on the tape (training mode).
void commit_batchnorm_stats(KpNetwork& net, const ForwardResult& forward);

// "VFK1" checkpoint: config JSON blob + named f64 tensors.
void save_checkpoint(KpNetwork& net, const std::string& path);
KpNetwork load_checkpoint(const std::string& path);

}  // namespace vf
