#include "vforest/kpconv.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>
#include <unordered_map>

#include "vforest/rng.hpp"

namespace vf {

KernelLayout init_kernel_points(int kernel_count, std::uint64_t rng_seed) {
    if (kernel_count < 1) throw ValidationError("kernel_count must be >= 1");
    if (kernel_count > 200)
        throw ValidationError("kernel_count > 200 violates the separation constraint");

    KernelLayout layout;
    layout.kernel_count = kernel_count;
    layout.points.assign(kernel_count, Vec3{});
    if (kernel_count == 1) return layout;

    Rng rng = Rng(rng_seed).fork(0x6b70);  // kernel-point stream
    for (int k = 1; k < kernel_count; ++k) layout.points[k] = rng.in_unit_sphere();

    // Repulsion descent; point 0 stays pinned at the origin.
    double step = 0.05;
    for (int iter = 0; iter < 20000; ++iter) {
        double max_move = 0.0;
        for (int k = 1; k < kernel_count; ++k) {
            Vec3 force{};
            for (int l = 0; l < kernel_count; ++l) {
                if (l == k) continue;
                const Vec3 d = layout.points[k] - layout.points[l];
                const double dist = std::max(d.norm(), 1e-6);
                force += d / (dist * dist * dist);
            }
            Vec3 moved = layout.points[k] + force * step;
            const double n = moved.norm();
            if (n > 1.0) moved = moved / n;
            max_move = std::max(max_move, (moved - layout.points[k]).norm());
            layout.points[k] = moved;
        }
        step *= 0.995;
        if (max_move < 1e-4) break;
    }
    return layout;
}

double kernel_repulsion(const KernelLayout& layout) {
    double acc = 0.0;
    for (int k = 0; k < layout.kernel_count; ++k)
        for (int l = k + 1; l < layout.kernel_count; ++l) {
            const double d = (layout.points[k] - layout.points[l]).norm();
            const double v = std::max(0.0, 1.0 - d);
            acc += v * v;
        }
    return acc;
}

namespace {

struct CellKey {
    std::int64_t x, y, z;
    bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
    std::size_t operator()(const CellKey& k) const {
        std::uint64_t h = Rng::mix64(static_cast<std::uint64_t>(k.x));
        h ^= Rng::mix64(static_cast<std::uint64_t>(k.y) + 0x9e3779b97f4a7c15ull);
        h ^= Rng::mix64(static_cast<std::uint64_t>(k.z) + 0x517cc1b727220a95ull);
        return static_cast<std::size_t>(h);
    }
};

CellKey cell_of(const Vec3& p, double cell) {
    return {static_cast<std::int64_t>(std::floor(p.x / cell)),
            static_cast<std::int64_t>(std::floor(p.y / cell)),
            static_cast<std::int64_t>(std::floor(p.z / cell))};
}

}  // namespace

NeighborTable radius_neighbors(const std::vector<Vec3>& queries, const std::vector<Vec3>& supports,
                               double radius, int max_neighbors) {
    if (radius <= 0) throw ValidationError("radius must be > 0");
    if (max_neighbors < 1) throw ValidationError("max_neighbors must be >= 1");

    std::unordered_map<CellKey, std::vector<std::uint32_t>, CellKeyHash> grid;
    grid.reserve(supports.size());
    for (std::uint32_t i = 0; i < supports.size(); ++i)
        grid[cell_of(supports[i], radius)].push_back(i);

    NeighborTable table;
    table.query_count = queries.size();
    table.max_neighbors = max_neighbors;
    table.indices.assign(queries.size() * static_cast<std::size_t>(max_neighbors), kNoNeighbor);

    const double r2 = radius * radius;
    std::vector<std::pair<double, std::uint32_t>> found;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        found.clear();
        const CellKey c = cell_of(queries[q], radius);
        for (std::int64_t dz = -1; dz <= 1; ++dz)
            for (std::int64_t dy = -1; dy <= 1; ++dy)
                for (std::int64_t dx = -1; dx <= 1; ++dx) {
                    auto it = grid.find(CellKey{c.x + dx, c.y + dy, c.z + dz});
                    if (it == grid.end()) continue;
                    for (std::uint32_t s : it->second) {
                        const double d2 = (supports[s] - queries[q]).norm2();
                        if (d2 <= r2) found.emplace_back(d2, s);
                    }
                }
        std::sort(found.begin(), found.end());
        const int keep = std::min<std::size_t>(found.size(), max_neighbors);
        for (int i = 0; i < keep; ++i)
            table.indices[q * static_cast<std::size_t>(max_neighbors) + i] = found[i].second;
    }
    return table;
}

SubsampleResult grid_subsample(const std::vector<Vec3>& points, const std::vector<double>& features,
                               int feature_dim, double dl) {
    if (dl <= 0) throw ValidationError("subsampling grid size dl must be > 0");
    if (feature_dim > 0 && features.size() != points.size() * static_cast<std::size_t>(feature_dim))
        throw ValidationError("grid_subsample: feature buffer size mismatch");

    std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>, std::vector<std::uint32_t>> cells;
    for (std::uint32_t i = 0; i < points.size(); ++i) {
        const CellKey k = cell_of(points[i], dl);
        cells[{k.x, k.y, k.z}].push_back(i);
    }

    SubsampleResult out;
    out.points.reserve(cells.size());
    out.features.reserve(cells.size() * static_cast<std::size_t>(feature_dim));
    out.members.reserve(cells.size());
    for (auto& [key, members] : cells) {
        Vec3 bary{};
        std::vector<double> feat(static_cast<std::size_t>(feature_dim), 0.0);
        for (std::uint32_t i : members) {
            bary += points[i];
            for (int f = 0; f < feature_dim; ++f)
                feat[f] += features[i * static_cast<std::size_t>(feature_dim) + f];
        }
        const double inv = 1.0 / static_cast<double>(members.size());
        out.points.push_back(bary * inv);
        for (int f = 0; f < feature_dim; ++f) out.features.push_back(feat[f] * inv);
        out.members.push_back(std::move(members));
    }
    return out;
}

std::vector<double> kpconv_forward(const Vec3& query, const std::vector<Vec3>& supports,
                                   const std::vector<double>& features, const KpconvLayer& layer) {
    if (features.size() != supports.size() * static_cast<std::size_t>(layer.c_in))
        throw ValidationError("kpconv_forward: feature buffer size mismatch");
    std::vector<double> out(layer.c_out, 0.0);
    const int K = layer.layout.kernel_count;
    std::vector<double> g(static_cast<std::size_t>(K) * layer.c_in, 0.0);
    for (std::size_t i = 0; i < supports.size(); ++i) {
        const Vec3 rel = supports[i] - query;
        for (int k = 0; k < K; ++k) {
            const Vec3 kp = layer.layout.points[k] * layer.radius;
            const double h = std::max(0.0, 1.0 - (rel - kp).norm() / layer.sigma);
            if (h <= 0.0) continue;
            for (int ci = 0; ci < layer.c_in; ++ci)
                g[static_cast<std::size_t>(k) * layer.c_in + ci] +=
                    h * features[i * static_cast<std::size_t>(layer.c_in) + ci];
        }
    }
    for (int k = 0; k < K; ++k)
        for (int ci = 0; ci < layer.c_in; ++ci) {
            const double gv = g[static_cast<std::size_t>(k) * layer.c_in + ci];
            if (gv == 0.0) continue;
            for (int co = 0; co < layer.c_out; ++co) out[co] += gv * layer.w(k, ci, co);
        }
    return out;
}

std::vector<double> kpconv_batch_forward(const std::vector<Vec3>& queries,
                                         const std::vector<Vec3>& supports,
                                         const std::vector<double>& features,
                                         const NeighborTable& neighbors, const KpconvLayer& layer,
                                         KpconvContext* ctx) {
    const int K = layer.layout.kernel_count;
    const int H = neighbors.max_neighbors;
    const std::size_t nq = queries.size();
    if (neighbors.query_count != nq)
        throw ValidationError("kpconv_batch_forward: neighbor table does not match queries");
    if (features.size() != supports.size() * static_cast<std::size_t>(layer.c_in))
        throw ValidationError("kpconv_batch_forward: feature buffer size mismatch");

    std::vector<Vec3> scaled(K);
    for (int k = 0; k < K; ++k) scaled[k] = layer.layout.points[k] * layer.radius;

    if (ctx) {
        ctx->query_count = nq;
        ctx->neighbors = &neighbors;
        ctx->input = features;
        ctx->influence.assign(nq * static_cast<std::size_t>(H) * K, 0.0);
    }

    std::vector<double> out(nq * static_cast<std::size_t>(layer.c_out), 0.0);
    std::vector<double> g(static_cast<std::size_t>(K) * layer.c_in);
    for (std::size_t q = 0; q < nq; ++q) {
        std::fill(g.begin(), g.end(), 0.0);
        const std::uint32_t* row = neighbors.row(q);
        for (int s = 0; s < H; ++s) {
            const std::uint32_t n = row[s];
            if (n == kNoNeighbor) break;  // rows are packed front-first
            const Vec3 rel = supports[n] - queries[q];
            const double* f = features.data() + n * static_cast<std::size_t>(layer.c_in);
            for (int k = 0; k < K; ++k) {
                const double h = std::max(0.0, 1.0 - (rel - scaled[k]).norm() / layer.sigma);
                if (h <= 0.0) continue;
                if (ctx)
                    ctx->influence[(q * static_cast<std::size_t>(H) + s) * K + k] = h;
                double* gk = g.data() + static_cast<std::size_t>(k) * layer.c_in;
                for (int ci = 0; ci < layer.c_in; ++ci) gk[ci] += h * f[ci];
            }
        }
        double* y = out.data() + q * static_cast<std::size_t>(layer.c_out);
        for (int k = 0; k < K; ++k)
            for (int ci = 0; ci < layer.c_in; ++ci) {
                const double gv = g[static_cast<std::size_t>(k) * layer.c_in + ci];
                if (gv == 0.0) continue;
                const double* wrow = layer.weights.data() +
                                     (static_cast<std::size_t>(k) * layer.c_in + ci) * layer.c_out;
                for (int co = 0; co < layer.c_out; ++co) y[co] += gv * wrow[co];
            }
    }
    return out;
}

KpconvGrads kpconv_backward(const std::vector<double>& upstream, const KpconvLayer& layer,
                            const KpconvContext& ctx) {
    if (!ctx.neighbors) throw ValidationError("kpconv_backward: missing forward context");
    const int K = layer.layout.kernel_count;
    const int H = ctx.neighbors->max_neighbors;
    const std::size_t nq = ctx.query_count;
    if (upstream.size() != nq * static_cast<std::size_t>(layer.c_out))
        throw ValidationError("kpconv_backward: upstream size mismatch");

    KpconvGrads grads;
    grads.d_weights.assign(layer.weights.size(), 0.0);
    grads.d_features.assign(ctx.input.size(), 0.0);

    std::vector<double> g(static_cast<std::size_t>(K) * layer.c_in);
    std::vector<double> dg(static_cast<std::size_t>(K) * layer.c_in);
    for (std::size_t q = 0; q < nq; ++q) {
        const std::uint32_t* row = ctx.neighbors->row(q);
        const double* dy = upstream.data() + q * static_cast<std::size_t>(layer.c_out);

        // rebuild g for this query from the saved influences
        std::fill(g.begin(), g.end(), 0.0);
        for (int s = 0; s < H; ++s) {
            const std::uint32_t n = row[s];
            if (n == kNoNeighbor) break;
            const double* f = ctx.input.data() + n * static_cast<std::size_t>(layer.c_in);
            const double* hrow = ctx.influence.data() + (q * static_cast<std::size_t>(H) + s) * K;
            for (int k = 0; k < K; ++k) {
                const double h = hrow[k];
                if (h == 0.0) continue;
                double* gk = g.data() + static_cast<std::size_t>(k) * layer.c_in;
                for (int ci = 0; ci < layer.c_in; ++ci) gk[ci] += h * f[ci];
            }
        }

        // dW += g outer dy ; dg = W . dy
        for (int k = 0; k < K; ++k)
            for (int ci = 0; ci < layer.c_in; ++ci) {
                const std::size_t base = (static_cast<std::size_t>(k) * layer.c_in + ci) * layer.c_out;
                const double gv = g[static_cast<std::size_t>(k) * layer.c_in + ci];
                double acc = 0.0;
                for (int co = 0; co < layer.c_out; ++co) {
                    grads.d_weights[base + co] += gv * dy[co];
                    acc += layer.weights[base + co] * dy[co];
                }
                dg[static_cast<std::size_t>(k) * layer.c_in + ci] = acc;
            }

        // df += h * dg
        for (int s = 0; s < H; ++s) {
            const std::uint32_t n = row[s];
            if (n == kNoNeighbor) break;
            double* df = grads.d_features.data() + n * static_cast<std::size_t>(layer.c_in);
            const double* hrow = ctx.influence.data() + (q * static_cast<std::size_t>(H) + s) * K;
            for (int k = 0; k < K; ++k) {
                const double h = hrow[k];
                if (h == 0.0) continue;
                const double* dgk = dg.data() + static_cast<std::size_t>(k) * layer.c_in;
                for (int ci = 0; ci < layer.c_in; ++ci) df[ci] += h * dgk[ci];
            }
        }
    }
    return grads;
}

BatchNorm BatchNorm::make(int channels) {
    BatchNorm bn;
    bn.channels = channels;
    bn.gamma.assign(channels, 1.0);
    bn.beta.assign(channels, 0.0);
    bn.run_mean.assign(channels, 0.0);
    bn.run_var.assign(channels, 1.0);
    return bn;
}

std::vector<double> batchnorm_forward(const BatchNorm& bn, const std::vector<double>& x,
                                      bool training, BatchNormContext* ctx) {
    const int C = bn.channels;
    const std::size_t n = x.size() / static_cast<std::size_t>(C);
    if (x.size() != n * static_cast<std::size_t>(C) || n == 0)
        throw ValidationError("batchnorm_forward: bad input size");

    std::vector<double> mean(C, 0.0), var(C, 0.0);
    if (training) {
        for (std::size_t i = 0; i < n; ++i)
            for (int c = 0; c < C; ++c) mean[c] += x[i * C + c];
        for (int c = 0; c < C; ++c) mean[c] /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (int c = 0; c < C; ++c) {
                const double d = x[i * C + c] - mean[c];
                var[c] += d * d;
            }
        for (int c = 0; c < C; ++c) var[c] /= static_cast<double>(n);
    } else {
        mean = bn.run_mean;
        var = bn.run_var;
    }

    std::vector<double> y(x.size());
    std::vector<double> x_hat(x.size());
    for (int c = 0; c < C; ++c) {
        const double inv = 1.0 / std::sqrt(var[c] + bn.eps);
        for (std::size_t i = 0; i < n; ++i) {
            const double xh = (x[i * C + c] - mean[c]) * inv;
            x_hat[i * C + c] = xh;
            y[i * C + c] = bn.gamma[c] * xh + bn.beta[c];
        }
    }
    if (ctx) {
        ctx->training = training;
        ctx->n = n;
        ctx->x_hat = std::move(x_hat);
        ctx->mean = std::move(mean);
        ctx->var = std::move(var);
    }
    return y;
}

void update_running_stats(BatchNorm& bn, const BatchNormContext& ctx) {
    if (!ctx.training) return;
    for (int c = 0; c < bn.channels; ++c) {
        bn.run_mean[c] = (1.0 - bn.momentum) * bn.run_mean[c] + bn.momentum * ctx.mean[c];
        bn.run_var[c] = (1.0 - bn.momentum) * bn.run_var[c] + bn.momentum * ctx.var[c];
    }
}

BatchNormGrads batchnorm_backward(const BatchNorm& bn, const std::vector<double>& upstream,
                                  const BatchNormContext& ctx) {
    const int C = bn.channels;
    const std::size_t n = ctx.n;
    if (upstream.size() != n * static_cast<std::size_t>(C))
        throw ValidationError("batchnorm_backward: upstream size mismatch");

    BatchNormGrads g;
    g.dx.assign(upstream.size(), 0.0);
    g.d_gamma.assign(C, 0.0);
    g.d_beta.assign(C, 0.0);

    for (int c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dy = upstream[i * C + c];
            sum_dy += dy;
            sum_dy_xhat += dy * ctx.x_hat[i * C + c];
        }
        g.d_beta[c] = sum_dy;
        g.d_gamma[c] = sum_dy_xhat;

        const double inv = 1.0 / std::sqrt(ctx.var[c] + bn.eps);
        if (ctx.training) {
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double dy = upstream[i * C + c];
                g.dx[i * C + c] = bn.gamma[c] * inv *
                                  (dy - inv_n * sum_dy - ctx.x_hat[i * C + c] * inv_n * sum_dy_xhat);
            }
        } else {
            for (std::size_t i = 0; i < n; ++i)
                g.dx[i * C + c] = upstream[i * C + c] * bn.gamma[c] * inv;
        }
    }
    return g;
}

std::vector<double> unary_forward(const UnaryBlock& block, const std::vector<double>& x,
                                  bool training, UnaryContext* ctx) {
    const std::size_t n = x.size() / static_cast<std::size_t>(block.c_in);
    if (x.size() != n * static_cast<std::size_t>(block.c_in))
        throw ValidationError("unary_forward: bad input size");

    std::vector<double> z(n * static_cast<std::size_t>(block.c_out), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.data() + i * block.c_in;
        double* zi = z.data() + i * block.c_out;
        for (int ci = 0; ci < block.c_in; ++ci) {
            const double v = xi[ci];
            if (v == 0.0) continue;
            const double* wrow = block.weights.data() + static_cast<std::size_t>(ci) * block.c_out;
            for (int co = 0; co < block.c_out; ++co) zi[co] += v * wrow[co];
        }
    }

    BatchNormContext bn_ctx;
    std::vector<double> a = batchnorm_forward(block.bn, z, training, &bn_ctx);
    std::vector<double> y(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) y[i] = leaky_relu(a[i]);

    if (ctx) {
        ctx->input = x;
        ctx->pre_bn = std::move(z);
        ctx->bn = std::move(bn_ctx);
        ctx->pre_act = std::move(a);
    }
    return y;
}

UnaryGrads unary_backward(const UnaryBlock& block, const std::vector<double>& upstream,
                          const UnaryContext& ctx) {
    std::vector<double> da(upstream.size());
    for (std::size_t i = 0; i < upstream.size(); ++i)
        da[i] = upstream[i] * leaky_relu_grad(ctx.pre_act[i]);

    const BatchNormGrads bng = batchnorm_backward(block.bn, da, ctx.bn);

    UnaryGrads g;
    g.d_gamma = bng.d_gamma;
    g.d_beta = bng.d_beta;
    g.d_weights.assign(block.weights.size(), 0.0);
    const std::size_t n = ctx.bn.n;
    g.dx.assign(n * static_cast<std::size_t>(block.c_in), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = ctx.input.data() + i * block.c_in;
        const double* dzi = bng.dx.data() + i * block.c_out;
        double* dxi = g.dx.data() + i * block.c_in;
        for (int ci = 0; ci < block.c_in; ++ci) {
            const double* wrow = block.weights.data() + static_cast<std::size_t>(ci) * block.c_out;
            double* dwrow = g.d_weights.data() + static_cast<std::size_t>(ci) * block.c_out;
            double acc = 0.0;
            for (int co = 0; co < block.c_out; ++co) {
                dwrow[co] += xi[ci] * dzi[co];
                acc += wrow[co] * dzi[co];
            }
            dxi[ci] = acc;
        }
    }
    return g;
}

std::vector<double> nearest_upsample(const std::vector<double>& coarse_features, int feature_dim,
                                     const std::vector<Vec3>& coarse_points,
                                     const std::vector<Vec3>& fine_points,
                                     std::vector<std::uint32_t>* mapping) {
    if (coarse_points.empty()) throw ValidationError("nearest_upsample: empty coarse set");
    std::vector<double> out(fine_points.size() * static_cast<std::size_t>(feature_dim));
    if (mapping) mapping->assign(fine_points.size(), 0);
    for (std::size_t i = 0; i < fine_points.size(); ++i) {
        std::uint32_t best = 0;
        double best_d = (coarse_points[0] - fine_points[i]).norm2();
        for (std::uint32_t c = 1; c < coarse_points.size(); ++c) {
            const double d = (coarse_points[c] - fine_points[i]).norm2();
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        if (mapping) (*mapping)[i] = best;
        for (int f = 0; f < feature_dim; ++f)
            out[i * static_cast<std::size_t>(feature_dim) + f] =
                coarse_features[best * static_cast<std::size_t>(feature_dim) + f];
    }
    return out;
}

}  // namespace vf
