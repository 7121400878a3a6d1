#pragma once

#include <cstdint>
#include <vector>

#include "vforest/common.hpp"

namespace vf {

inline constexpr std::uint32_t kNoNeighbor = 0xffffffffu;

// Kernel point disposition inside the unit sphere: one point pinned at the
// origin, the rest settled by deterministic repulsion descent.
struct KernelLayout {
    int kernel_count = 0;
    std::vector<Vec3> points;  // unit-sphere coordinates, points[0] = origin
    double sigma = 1.0;        // influence distance (set per layer)
};

KernelLayout init_kernel_points(int kernel_count, std::uint64_t rng_seed);

// Sum over point pairs of max(0, 1 - d)^2; constant w.r.t. trainable
// parameters in rigid mode, used as the regularizer value.
double kernel_repulsion(const KernelLayout& layout);

struct NeighborTable {
    std::size_t query_count = 0;
    int max_neighbors = 0;
    std::vector<std::uint32_t> indices;  // query-major, padded with kNoNeighbor

    const std::uint32_t* row(std::size_t q) const { return indices.data() + q * max_neighbors; }
};

// Supports within `radius` of each query, sorted by distance (index breaks
// ties), truncated to max_neighbors, padded with kNoNeighbor. Backed by a
// uniform spatial hash of cell size `radius`.
NeighborTable radius_neighbors(const std::vector<Vec3>& queries, const std::vector<Vec3>& supports,
                               double radius, int max_neighbors);

struct SubsampleResult {
    std::vector<Vec3> points;              // one barycenter per non-empty cell
    std::vector<double> features;          // averaged, row-major [point][dim]
    std::vector<std::vector<std::uint32_t>> members;  // input indices per output point
};

// Barycenter grid subsampling with cell side dl; output cells are ordered
// lexicographically by (cx, cy, cz).
SubsampleResult grid_subsample(const std::vector<Vec3>& points, const std::vector<double>& features,
                               int feature_dim, double dl);

struct KpconvLayer {
    KernelLayout layout;  // unit-sphere disposition; scaled by `radius` at evaluation
    double radius = 1.0;  // neighborhood radius; kernel points live at layout.points * radius
    double sigma = 0.3;   // influence distance in absolute units
    int c_in = 0;
    int c_out = 0;
    std::vector<double> weights;  // [K][c_in][c_out]

    double& w(int k, int ci, int co) { return weights[(k * c_in + ci) * c_out + co]; }
    double w(int k, int ci, int co) const { return weights[(k * c_in + ci) * c_out + co]; }
};

// Single-query kernel point convolution:
//   out[co] = sum_i sum_k max(0, 1 - |x_i - x - xk|/sigma) * f_i . W_k
std::vector<double> kpconv_forward(const Vec3& query, const std::vector<Vec3>& supports,
                                   const std::vector<double>& features, const KpconvLayer& layer);

// Batched convolution over a neighbor table, with the saved context needed
// for the hand-derived backward pass.
struct KpconvContext {
    std::size_t query_count = 0;
    std::vector<double> influence;  // [query][slot][K], zero for padded slots
    const NeighborTable* neighbors = nullptr;
    std::vector<double> input;      // copy of input features [support][c_in]
};

std::vector<double> kpconv_batch_forward(const std::vector<Vec3>& queries,
                                         const std::vector<Vec3>& supports,
                                         const std::vector<double>& features,
                                         const NeighborTable& neighbors, const KpconvLayer& layer,
                                         KpconvContext* ctx);

struct KpconvGrads {
    std::vector<double> d_weights;   // same layout as layer.weights
    std::vector<double> d_features;  // [support][c_in]
};

KpconvGrads kpconv_backward(const std::vector<double>& upstream, const KpconvLayer& layer,
                            const KpconvContext& ctx);

// Batch normalization over the point dimension, one statistic per channel.
struct BatchNorm {
    int channels = 0;
    std::vector<double> gamma, beta;        // trainable
    std::vector<double> run_mean, run_var;  // running statistics (eval mode)
    double eps = 1e-5;
    double momentum = 0.1;

    static BatchNorm make(int channels);
};

struct BatchNormContext {
    bool training = true;
    std::size_t n = 0;
    std::vector<double> x_hat;
    std::vector<double> mean, var;  // batch statistics used in the forward pass
};

// Pure function: does not touch running statistics. Call update_running_stats
// with the saved context to commit them after a training step.
std::vector<double> batchnorm_forward(const BatchNorm& bn, const std::vector<double>& x,
                                      bool training, BatchNormContext* ctx);

void update_running_stats(BatchNorm& bn, const BatchNormContext& ctx);

struct BatchNormGrads {
    std::vector<double> dx, d_gamma, d_beta;
};

BatchNormGrads batchnorm_backward(const BatchNorm& bn, const std::vector<double>& upstream,
                                  const BatchNormContext& ctx);

inline double leaky_relu(double x) { return x > 0.0 ? x : 0.1 * x; }
inline double leaky_relu_grad(double x) { return x > 0.0 ? 1.0 : 0.1; }

// Unary block: linear map (no bias) -> batch norm -> leaky rectifier.
struct UnaryBlock {
    int c_in = 0, c_out = 0;
    std::vector<double> weights;  // [c_in][c_out]
    BatchNorm bn;
};

struct UnaryContext {
    std::vector<double> input;    // [n][c_in]
    std::vector<double> pre_bn;   // [n][c_out]
    BatchNormContext bn;
    std::vector<double> pre_act;  // post-BN values feeding the rectifier
};

std::vector<double> unary_forward(const UnaryBlock& block, const std::vector<double>& x,
                                  bool training, UnaryContext* ctx);

struct UnaryGrads {
    std::vector<double> dx, d_weights, d_gamma, d_beta;
};

UnaryGrads unary_backward(const UnaryBlock& block, const std::vector<double>& upstream,
                          const UnaryContext& ctx);

// Each fine point takes the features of its nearest coarse point (smallest
// index on exact ties). Returns the mapping used for the backward scatter.
std::vector<double> nearest_upsample(const std::vector<double>& coarse_features, int feature_dim,
                                     const std::vector<Vec3>& coarse_points,
                                     const std::vector<Vec3>& fine_points,
                                     std::vector<std::uint32_t>* mapping);

}  // namespace vf
