#include "vforest/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vforest/io.hpp"
#include "vforest/rng.hpp"

#include "json.hpp"

namespace vf {

double NetworkConfig::radius_at(int stage) const {
    const double r0 = first_radius > 0 ? first_radius : 2.5 * voxel_size;
    return r0 * std::pow(2.0, stage);
}

double NetworkConfig::dl_at(int stage) const {
    const double dl0 = first_subsample_dl > 0 ? first_subsample_dl : 2.5 * voxel_size;
    return dl0 * std::pow(2.0, stage);
}

double NetworkConfig::sphere_radius() const {
    return input_sphere_radius > 0 ? input_sphere_radius : 10.0 * voxel_size;
}

void NetworkConfig::validate() const {
    if (stages < 2) throw ValidationError("network needs at least 2 stages");
    if (base_channels < 1) throw ValidationError("base_channels must be >= 1");
    if (kernel_points < 1) throw ValidationError("kernel_points must be >= 1");
    if (voxel_size <= 0) throw ValidationError("voxel_size must be > 0");
    if (max_neighbors < 1) throw ValidationError("max_neighbors must be >= 1");
    if (sigma_ratio <= 0) throw ValidationError("sigma_ratio must be > 0");
    if (sphere_radius() <= radius_at(0))
        throw ValidationError("input sphere radius must exceed the first conv radius");
    if (!rigid) throw ValidationError("only the rigid architecture is implemented");
}

namespace {

std::vector<double> random_weights(std::size_t n, double stddev, Rng rng) {
    std::vector<double> w(n);
    for (auto& v : w) v = rng.next_normal() * stddev;
    return w;
}

UnaryBlock make_unary(int c_in, int c_out, Rng rng) {
    UnaryBlock u;
    u.c_in = c_in;
    u.c_out = c_out;
    u.weights = random_weights(static_cast<std::size_t>(c_in) * c_out,
                               std::sqrt(2.0 / static_cast<double>(c_in)), rng);
    u.bn = BatchNorm::make(c_out);
    return u;
}

}  // namespace

KpNetwork KpNetwork::build(const NetworkConfig& cfg, std::uint64_t rng_seed) {
    cfg.validate();
    KpNetwork net;
    net.config = cfg;
    net.unit_layout = init_kernel_points(cfg.kernel_points, rng_seed);

    Rng rng = Rng(rng_seed).fork(0x11e7);
    const int S = cfg.stages;
    for (int s = 0; s < S; ++s) {
        const int c_in = s == 0 ? 2 : cfg.base_channels << (s - 1);
        const int c_out = cfg.base_channels << s;
        ConvBlock block;
        block.conv.layout = net.unit_layout;
        block.conv.radius = cfg.radius_at(s);
        block.conv.sigma = cfg.sigma_ratio * block.conv.radius;
        block.conv.c_in = c_in;
        block.conv.c_out = c_out;
        block.conv.weights =
            random_weights(static_cast<std::size_t>(cfg.kernel_points) * c_in * c_out,
                           1.0 / std::sqrt(static_cast<double>(cfg.kernel_points) * c_in),
                           rng.fork(1, static_cast<std::uint64_t>(s)));
        block.bn = BatchNorm::make(c_out);
        net.encoder_conv.push_back(std::move(block));
        net.encoder_unary.push_back(
            make_unary(c_out, c_out, rng.fork(2, static_cast<std::uint64_t>(s))));
    }
    for (int j = 0; j < S; ++j) {
        const int s = S - 1 - j;
        const int up_c = j == 0 ? (cfg.base_channels << (S - 1))
                                : net.decoder_unary.back().c_out;
        const int skip_c = cfg.base_channels << s;
        const int out_c = s > 0 ? (cfg.base_channels << (s - 1)) : cfg.base_channels;
        net.decoder_unary.push_back(
            make_unary(up_c + skip_c, out_c, rng.fork(3, static_cast<std::uint64_t>(j))));
    }
    net.head_weights = random_weights(static_cast<std::size_t>(cfg.base_channels) * kMaterialCount,
                                      std::sqrt(1.0 / cfg.base_channels), rng.fork(4, 0));
    net.head_bias.assign(kMaterialCount, 0.0);
    return net;
}

std::vector<ParamRef> KpNetwork::parameters() {
    std::vector<ParamRef> refs;
    auto add = [&](const std::string& name, std::vector<double>& v, bool trainable) {
        refs.push_back({name, &v, trainable});
    };
    for (std::size_t s = 0; s < encoder_conv.size(); ++s) {
        const std::string p = "enc" + std::to_string(s);
        add(p + ".conv.w", encoder_conv[s].conv.weights, true);
        add(p + ".conv.bn.gamma", encoder_conv[s].bn.gamma, true);
        add(p + ".conv.bn.beta", encoder_conv[s].bn.beta, true);
        add(p + ".unary.w", encoder_unary[s].weights, true);
        add(p + ".unary.bn.gamma", encoder_unary[s].bn.gamma, true);
        add(p + ".unary.bn.beta", encoder_unary[s].bn.beta, true);
    }
    for (std::size_t j = 0; j < decoder_unary.size(); ++j) {
        const std::string p = "dec" + std::to_string(j);
        add(p + ".unary.w", decoder_unary[j].weights, true);
        add(p + ".unary.bn.gamma", decoder_unary[j].bn.gamma, true);
        add(p + ".unary.bn.beta", decoder_unary[j].bn.beta, true);
    }
    add("head.w", head_weights, true);
    add("head.b", head_bias, true);
    // non-trainable state, kept for checkpoints
    for (std::size_t s = 0; s < encoder_conv.size(); ++s) {
        const std::string p = "enc" + std::to_string(s);
        add(p + ".conv.bn.run_mean", encoder_conv[s].bn.run_mean, false);
        add(p + ".conv.bn.run_var", encoder_conv[s].bn.run_var, false);
        add(p + ".unary.bn.run_mean", encoder_unary[s].bn.run_mean, false);
        add(p + ".unary.bn.run_var", encoder_unary[s].bn.run_var, false);
    }
    for (std::size_t j = 0; j < decoder_unary.size(); ++j) {
        const std::string p = "dec" + std::to_string(j);
        add(p + ".unary.bn.run_mean", decoder_unary[j].bn.run_mean, false);
        add(p + ".unary.bn.run_var", decoder_unary[j].bn.run_var, false);
    }
    return refs;
}

std::size_t KpNetwork::parameter_count() const {
    std::size_t n = 0;
    for (const auto& b : encoder_conv)
        n += b.conv.weights.size() + b.bn.gamma.size() + b.bn.beta.size();
    for (const auto& u : encoder_unary) n += u.weights.size() + u.bn.gamma.size() + u.bn.beta.size();
    for (const auto& u : decoder_unary) n += u.weights.size() + u.bn.gamma.size() + u.bn.beta.size();
    return n + head_weights.size() + head_bias.size();
}

struct ForwardTape {
    RunMode mode = RunMode::Train;
    struct Level {
        std::vector<Vec3> points;
        NeighborTable neighbors;
        KpconvContext conv_ctx;
        BatchNormContext conv_bn_ctx;
        std::vector<double> conv_pre_act;  // post-BN, pre-rectifier
        UnaryContext unary_ctx;
        std::vector<double> skip;
        std::vector<std::vector<std::uint32_t>> pool_members;
    };
    std::vector<Level> levels;
    std::vector<Vec3> bottom_points;
    std::vector<double> bottom_features;
    struct Dec {
        std::vector<std::uint32_t> up_map;
        UnaryContext unary_ctx;
    };
    std::vector<Dec> dec;
    std::vector<double> head_in;
    std::vector<double> probabilities;
};

namespace {

void check_finite(const std::vector<double>& v, const std::string& where) {
    for (double x : v)
        if (!std::isfinite(x))
            throw ComputeError("non-finite activations in " + where);
}

}  // namespace

ForwardResult network_forward(const KpNetwork& net, const SphereBatch& batch, RunMode mode) {
    if (batch.positions.empty()) throw ValidationError("network_forward: empty input sphere");
    if (batch.positions.size() != batch.intensity.size())
        throw ValidationError("network_forward: positions/intensity size mismatch");

    const NetworkConfig& cfg = net.config;
    const bool training = mode == RunMode::Train;
    auto tape = std::make_shared<ForwardTape>();
    tape->mode = mode;

    // Sphere-local coordinates: only relative positions reach the kernels.
    std::vector<Vec3> points(batch.positions.size());
    for (std::size_t i = 0; i < points.size(); ++i) points[i] = batch.positions[i] - batch.center;

    std::vector<double> features(points.size() * 2);
    for (std::size_t i = 0; i < points.size(); ++i) {
        features[i * 2 + 0] = 1.0;  // bias channel
        features[i * 2 + 1] = batch.intensity[i];
    }

    const int S = cfg.stages;
    tape->levels.resize(S);
    for (int s = 0; s < S; ++s) {
        ForwardTape::Level& lvl = tape->levels[s];
        lvl.points = std::move(points);
        const KpNetwork::ConvBlock& block = net.encoder_conv[s];

        lvl.neighbors = radius_neighbors(lvl.points, lvl.points, block.conv.radius, cfg.max_neighbors);
        std::vector<double> raw = kpconv_batch_forward(lvl.points, lvl.points, features,
                                                       lvl.neighbors, block.conv, &lvl.conv_ctx);
        std::vector<double> bn_out = batchnorm_forward(block.bn, raw, training, &lvl.conv_bn_ctx);
        lvl.conv_pre_act = bn_out;
        std::vector<double> act(bn_out.size());
        for (std::size_t i = 0; i < bn_out.size(); ++i) act[i] = leaky_relu(bn_out[i]);
        check_finite(act, "encoder stage " + std::to_string(s) + " conv");

        lvl.skip = unary_forward(net.encoder_unary[s], act, training, &lvl.unary_ctx);
        check_finite(lvl.skip, "encoder stage " + std::to_string(s) + " unary");

        SubsampleResult pooled = grid_subsample(lvl.points, lvl.skip,
                                                net.encoder_unary[s].c_out, cfg.dl_at(s));
        lvl.pool_members = std::move(pooled.members);
        points = std::move(pooled.points);
        features = std::move(pooled.features);
    }
    tape->bottom_points = points;
    tape->bottom_features = features;

    std::vector<double> current = tape->bottom_features;
    const std::vector<Vec3>* coarse = &tape->bottom_points;
    int current_dim = net.config.base_channels << (S - 1);
    tape->dec.resize(S);
    for (int j = 0; j < S; ++j) {
        const int s = S - 1 - j;
        ForwardTape::Dec& dec = tape->dec[j];
        const ForwardTape::Level& lvl = tape->levels[s];
        std::vector<double> up =
            nearest_upsample(current, current_dim, *coarse, lvl.points, &dec.up_map);

        const UnaryBlock& u = net.decoder_unary[j];
        const int skip_dim = net.encoder_unary[s].c_out;
        std::vector<double> concat(lvl.points.size() * static_cast<std::size_t>(u.c_in));
        for (std::size_t i = 0; i < lvl.points.size(); ++i) {
            for (int c = 0; c < current_dim; ++c)
                concat[i * u.c_in + c] = up[i * current_dim + c];
            for (int c = 0; c < skip_dim; ++c)
                concat[i * u.c_in + current_dim + c] = lvl.skip[i * skip_dim + c];
        }
        current = unary_forward(u, concat, training, &dec.unary_ctx);
        check_finite(current, "decoder stage " + std::to_string(j));
        current_dim = u.c_out;
        coarse = &lvl.points;
    }
    tape->head_in = current;

    const std::size_t n = batch.positions.size();
    std::vector<double> probs(n * kMaterialCount);
    for (std::size_t i = 0; i < n; ++i) {
        double logits[kMaterialCount];
        double max_logit = -1e300;
        for (int t = 0; t < kMaterialCount; ++t) {
            double acc = net.head_bias[t];
            for (int c = 0; c < cfg.base_channels; ++c)
                acc += current[i * cfg.base_channels + c] * net.head_weights[c * kMaterialCount + t];
            logits[t] = acc;
            max_logit = std::max(max_logit, acc);
        }
        double z = 0.0;
        for (int t = 0; t < kMaterialCount; ++t) {
            logits[t] = std::exp(logits[t] - max_logit);
            z += logits[t];
        }
        for (int t = 0; t < kMaterialCount; ++t) probs[i * kMaterialCount + t] = logits[t] / z;
    }
    check_finite(probs, "softmax head");
    tape->probabilities = probs;

    ForwardResult result;
    result.probabilities = std::move(probs);
    result.tape = std::move(tape);
    return result;
}

NetworkGrads network_backward(const KpNetwork& net, const ForwardResult& forward,
                              const std::vector<double>& d_probabilities) {
    const ForwardTape& tape = *forward.tape;
    const NetworkConfig& cfg = net.config;
    const int S = cfg.stages;
    const std::size_t n = tape.probabilities.size() / kMaterialCount;
    if (d_probabilities.size() != tape.probabilities.size())
        throw ValidationError("network_backward: gradient size mismatch");

    // softmax backward
    std::vector<double> d_logits(n * kMaterialCount);
    for (std::size_t i = 0; i < n; ++i) {
        const double* p = tape.probabilities.data() + i * kMaterialCount;
        const double* dp = d_probabilities.data() + i * kMaterialCount;
        double dot = 0.0;
        for (int t = 0; t < kMaterialCount; ++t) dot += dp[t] * p[t];
        for (int t = 0; t < kMaterialCount; ++t)
            d_logits[i * kMaterialCount + t] = p[t] * (dp[t] - dot);
    }

    // head backward
    std::vector<double> d_head_w(net.head_weights.size(), 0.0);
    std::vector<double> d_head_b(kMaterialCount, 0.0);
    std::vector<double> d_current(n * static_cast<std::size_t>(cfg.base_channels), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* hi = tape.head_in.data() + i * cfg.base_channels;
        const double* dl = d_logits.data() + i * kMaterialCount;
        for (int c = 0; c < cfg.base_channels; ++c) {
            double acc = 0.0;
            for (int t = 0; t < kMaterialCount; ++t) {
                d_head_w[c * kMaterialCount + t] += hi[c] * dl[t];
                acc += net.head_weights[c * kMaterialCount + t] * dl[t];
            }
            d_current[i * cfg.base_channels + c] = acc;
        }
        for (int t = 0; t < kMaterialCount; ++t) d_head_b[t] += dl[t];
    }

    // decoder backward, reverse application order
    std::vector<std::vector<double>> d_skip(S);
    struct DecGrad {
        std::vector<double> w, gamma, beta;
    };
    std::vector<DecGrad> dec_grads(S);
    for (int j = S - 1; j >= 0; --j) {
        const int s = S - 1 - j;
        const UnaryBlock& u = net.decoder_unary[j];
        const ForwardTape::Dec& dec = tape.dec[j];
        const ForwardTape::Level& lvl = tape.levels[s];

        UnaryGrads ug = unary_backward(u, d_current, dec.unary_ctx);
        dec_grads[j] = {std::move(ug.d_weights), std::move(ug.d_gamma), std::move(ug.d_beta)};

        const int up_dim = u.c_in - net.encoder_unary[s].c_out;
        const int skip_dim = net.encoder_unary[s].c_out;
        const std::size_t coarse_n =
            j == 0 ? tape.bottom_points.size() : tape.levels[s + 1].points.size();

        std::vector<double> d_up(coarse_n * static_cast<std::size_t>(up_dim), 0.0);
        auto& ds = d_skip[s];
        ds.assign(lvl.points.size() * static_cast<std::size_t>(skip_dim), 0.0);
        for (std::size_t i = 0; i < lvl.points.size(); ++i) {
            const double* row = ug.dx.data() + i * u.c_in;
            double* up_row = d_up.data() + dec.up_map[i] * static_cast<std::size_t>(up_dim);
            for (int c = 0; c < up_dim; ++c) up_row[c] += row[c];
            for (int c = 0; c < skip_dim; ++c) ds[i * skip_dim + c] += row[up_dim + c];
        }
        d_current = std::move(d_up);
    }
    // d_current now holds the gradient at the bottom (level S) features.

    struct EncGrad {
        std::vector<double> conv_w, conv_gamma, conv_beta, unary_w, unary_gamma, unary_beta;
    };
    std::vector<EncGrad> enc_grads(S);
    std::vector<double> d_pooled = std::move(d_current);
    for (int s = S - 1; s >= 0; --s) {
        const ForwardTape::Level& lvl = tape.levels[s];
        const int skip_dim = net.encoder_unary[s].c_out;

        // pool backward: averaged features spread the gradient over members
        std::vector<double>& ds = d_skip[s];
        for (std::size_t cell = 0; cell < lvl.pool_members.size(); ++cell) {
            const auto& members = lvl.pool_members[cell];
            const double inv = 1.0 / static_cast<double>(members.size());
            const double* dp = d_pooled.data() + cell * static_cast<std::size_t>(skip_dim);
            for (std::uint32_t m : members)
                for (int c = 0; c < skip_dim; ++c) ds[m * static_cast<std::size_t>(skip_dim) + c] += dp[c] * inv;
        }

        UnaryGrads ug = unary_backward(net.encoder_unary[s], ds, lvl.unary_ctx);
        enc_grads[s].unary_w = std::move(ug.d_weights);
        enc_grads[s].unary_gamma = std::move(ug.d_gamma);
        enc_grads[s].unary_beta = std::move(ug.d_beta);

        std::vector<double> d_act = std::move(ug.dx);
        for (std::size_t i = 0; i < d_act.size(); ++i)
            d_act[i] *= leaky_relu_grad(lvl.conv_pre_act[i]);

        BatchNormGrads bng = batchnorm_backward(net.encoder_conv[s].bn, d_act, lvl.conv_bn_ctx);
        enc_grads[s].conv_gamma = std::move(bng.d_gamma);
        enc_grads[s].conv_beta = std::move(bng.d_beta);

        KpconvGrads kg = kpconv_backward(bng.dx, net.encoder_conv[s].conv, lvl.conv_ctx);
        enc_grads[s].conv_w = std::move(kg.d_weights);
        d_pooled = std::move(kg.d_features);  // gradient at this level's input features
    }

    NetworkGrads grads;
    for (int s = 0; s < S; ++s) {
        grads.tensors.push_back(std::move(enc_grads[s].conv_w));
        grads.tensors.push_back(std::move(enc_grads[s].conv_gamma));
        grads.tensors.push_back(std::move(enc_grads[s].conv_beta));
        grads.tensors.push_back(std::move(enc_grads[s].unary_w));
        grads.tensors.push_back(std::move(enc_grads[s].unary_gamma));
        grads.tensors.push_back(std::move(enc_grads[s].unary_beta));
    }
    for (int j = 0; j < S; ++j) {
        grads.tensors.push_back(std::move(dec_grads[j].w));
        grads.tensors.push_back(std::move(dec_grads[j].gamma));
        grads.tensors.push_back(std::move(dec_grads[j].beta));
    }
    grads.tensors.push_back(std::move(d_head_w));
    grads.tensors.push_back(std::move(d_head_b));
    return grads;
}

void commit_batchnorm_stats(KpNetwork& net, const ForwardResult& forward) {
    const ForwardTape& tape = *forward.tape;
    if (tape.mode != RunMode::Train) return;
    for (int s = 0; s < net.config.stages; ++s) {
        update_running_stats(net.encoder_conv[s].bn, tape.levels[s].conv_bn_ctx);
        update_running_stats(net.encoder_unary[s].bn, tape.levels[s].unary_ctx.bn);
    }
    for (int j = 0; j < net.config.stages; ++j)
        update_running_stats(net.decoder_unary[j].bn, tape.dec[j].unary_ctx.bn);
}

void save_checkpoint(KpNetwork& net, const std::string& path) {
    nlohmann::json cfg;
    cfg["stages"] = net.config.stages;
    cfg["base_channels"] = net.config.base_channels;
    cfg["kernel_points"] = net.config.kernel_points;
    cfg["voxel_size"] = net.config.voxel_size;
    cfg["first_radius"] = net.config.first_radius;
    cfg["first_subsample_dl"] = net.config.first_subsample_dl;
    cfg["input_sphere_radius"] = net.config.input_sphere_radius;
    cfg["sigma_ratio"] = net.config.sigma_ratio;
    cfg["max_neighbors"] = net.config.max_neighbors;
    cfg["rigid"] = net.config.rigid;
    const std::string blob = cfg.dump();

    io::BinaryWriter w(path);
    w.magic("VFK1");
    w.str(blob);

    auto params = net.parameters();
    // +1 tensor for the kernel layout
    w.u32(static_cast<std::uint32_t>(params.size() + 1));
    {
        std::vector<double> flat;
        for (const Vec3& p : net.unit_layout.points) {
            flat.push_back(p.x);
            flat.push_back(p.y);
            flat.push_back(p.z);
        }
        w.str("kernel_points");
        w.u8(2);
        w.u32(static_cast<std::uint32_t>(net.unit_layout.points.size()));
        w.u32(3);
        for (double v : flat) w.f64(v);
    }
    for (const ParamRef& ref : params) {
        w.str(ref.name);
        w.u8(1);
        w.u32(static_cast<std::uint32_t>(ref.data->size()));
        for (double v : *ref.data) w.f64(v);
    }
    if (!w.good()) throw ComputeError("write failed: " + path);
}

KpNetwork load_checkpoint(const std::string& path) {
    io::BinaryReader r(path);
    r.expect_magic("VFK1");
    const std::string blob = r.str();
    nlohmann::json cfg = nlohmann::json::parse(blob);

    NetworkConfig nc;
    nc.stages = cfg.at("stages").get<int>();
    nc.base_channels = cfg.at("base_channels").get<int>();
    nc.kernel_points = cfg.at("kernel_points").get<int>();
    nc.voxel_size = cfg.at("voxel_size").get<double>();
    nc.first_radius = cfg.at("first_radius").get<double>();
    nc.first_subsample_dl = cfg.at("first_subsample_dl").get<double>();
    nc.input_sphere_radius = cfg.at("input_sphere_radius").get<double>();
    nc.sigma_ratio = cfg.at("sigma_ratio").get<double>();
    nc.max_neighbors = cfg.at("max_neighbors").get<int>();
    nc.rigid = cfg.at("rigid").get<bool>();

    KpNetwork net = KpNetwork::build(nc, 0);
    const std::uint32_t tensor_count = r.u32();
    auto params = net.parameters();
    for (std::uint32_t t = 0; t < tensor_count; ++t) {
        const std::string name = r.str();
        const std::uint8_t rank = r.u8();
        std::size_t total = 1;
        for (std::uint8_t d = 0; d < rank; ++d) total *= r.u32();
        std::vector<double> data(total);
        for (auto& v : data) v = r.f64();
        if (name == "kernel_points") {
            if (total != net.unit_layout.points.size() * 3)
                throw ValidationError(path + ": kernel layout size mismatch");
            for (std::size_t k = 0; k < net.unit_layout.points.size(); ++k)
                net.unit_layout.points[k] = {data[k * 3], data[k * 3 + 1], data[k * 3 + 2]};
            for (auto& block : net.encoder_conv) block.conv.layout = net.unit_layout;
            continue;
        }
        bool matched = false;
        for (const ParamRef& ref : params) {
            if (ref.name != name) continue;
            if (ref.data->size() != data.size())
                throw ValidationError(path + ": tensor size mismatch for " + name);
            *ref.data = std::move(data);
            matched = true;
            break;
        }
        if (!matched) throw ValidationError(path + ": unknown tensor " + name);
    }
    return net;
}

}  // namespace vf
