#include "vforest/loss.hpp"

#include <cmath>
#include <sstream>

#include "vforest/io.hpp"

namespace vf {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_lengths(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw ValidationError(std::string(what) + ": length mismatch");
    if (a == 0) throw ValidationError(std::string(what) + ": empty batch");
}

}  // namespace

LossValue wmse(const std::vector<double>& targets, const std::vector<double>& predictions,
               const std::vector<double>& weights, const LossConfig& cfg) {
    cfg.validate();
    check_lengths(targets.size(), predictions.size(), "wmse");
    check_lengths(targets.size(), weights.size(), "wmse");

    const std::size_t n = targets.size();
    double w_sum = 0.0;
    for (double w : weights) w_sum += w;
    if (w_sum <= 0.0) throw ValidationError("wmse: sum of weights must be > 0");

    const double outer = (cfg.wmse_extra_inv_n ? 1.0 / static_cast<double>(n) : 1.0) / w_sum;

    LossValue out;
    out.grad.assign(n, 0.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = targets[i] - predictions[i];
        if (cfg.regression_metric == RegressionMetric::MSE) {
            acc += weights[i] * d * d;
            out.grad[i] = outer * weights[i] * (-2.0 * d);
        } else {
            acc += weights[i] * std::fabs(d);
            // subgradient 0 at the kink
            out.grad[i] = outer * weights[i] * (d > 0 ? -1.0 : (d < 0 ? 1.0 : 0.0));
        }
    }
    out.value = outer * acc;
    return out;
}

LossValue focalr(const std::vector<double>& targets, const std::vector<double>& predictions,
                 const LossConfig& cfg) {
    cfg.validate();
    check_lengths(targets.size(), predictions.size(), "focalr");

    const std::size_t n = targets.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    LossValue out;
    out.grad.assign(n, 0.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = targets[i] - predictions[i];
        const double e = d * d;
        const double s = sigmoid(std::fabs(cfg.focalr_beta * e));
        double term, dterm_de;
        if (cfg.focalr_as_written) {
            term = s * cfg.focalr_gamma * e;
            dterm_de = cfg.focalr_gamma * (s + s * (1.0 - s) * cfg.focalr_beta * e);
        } else {
            const double sg = std::pow(s, cfg.focalr_gamma);
            term = sg * e;
            dterm_de = sg * (1.0 + cfg.focalr_gamma * (1.0 - s) * cfg.focalr_beta * e);
        }
        acc += term;
        out.grad[i] = inv_n * dterm_de * (-2.0 * d);
    }
    out.value = inv_n * acc;
    return out;
}

LossValue target_loss(const std::vector<double>& targets, const std::vector<double>& predictions,
                      const std::vector<double>& weights, double reg_value, const LossConfig& cfg) {
    LossValue w = wmse(targets, predictions, weights, cfg);
    w.value += reg_value;
    if (cfg.focalr_enabled) {
        const LossValue f = focalr(targets, predictions, cfg);
        w.value += f.value;
        for (std::size_t i = 0; i < w.grad.size(); ++i) w.grad[i] += f.grad[i];
    }
    return w;
}

LossBreakdown total_loss(const std::array<TargetChannel, kMaterialCount>& channels,
                         double reg_value, const LossConfig& cfg) {
    LossBreakdown breakdown;
    for (int m = 0; m < kMaterialCount; ++m) {
        const TargetChannel& ch = channels[m];
        if (ch.targets.empty())
            throw ValidationError(std::string("total_loss: missing channel ") +
                                  material_name(static_cast<Material>(m)));
        const LossValue w = wmse(ch.targets, ch.predictions, ch.weights, cfg);
        breakdown.per_target[m].wmse = w.value;
        breakdown.per_target[m].reg = reg_value;
        breakdown.grad[m] = w.grad;
        if (cfg.focalr_enabled) {
            const LossValue f = focalr(ch.targets, ch.predictions, cfg);
            breakdown.per_target[m].focalr = f.value;
            for (std::size_t i = 0; i < f.grad.size(); ++i) breakdown.grad[m][i] += f.grad[i];
        }
        breakdown.total +=
            breakdown.per_target[m].wmse + breakdown.per_target[m].reg + breakdown.per_target[m].focalr;
    }
    return breakdown;
}

std::string LossBreakdown::to_json(std::uint64_t step, double lr) const {
    std::ostringstream os;
    os << "{\"step\":" << step << ",\"lr\":" << io::format_double(lr);
    for (int m = 0; m < kMaterialCount; ++m) {
        const Component& c = per_target[m];
        os << ",\"" << material_name(static_cast<Material>(m)) << "\":{\"wmse\":"
           << io::format_double(c.wmse) << ",\"focalr\":" << io::format_double(c.focalr)
           << ",\"reg\":" << io::format_double(c.reg) << "}";
    }
    os << ",\"total\":" << io::format_double(total) << "}";
    return os.str();
}

}  // namespace vf
