#pragma once

#include <array>
#include <string>
#include <vector>

#include "vforest/common.hpp"
#include "vforest/mesh.hpp"

namespace vf {

enum class RegressionMetric { MSE, L1 };

struct LossConfig {
    RegressionMetric regression_metric = RegressionMetric::MSE;
    bool focalr_enabled = false;
    double focalr_beta = 1.0;
    double focalr_gamma = 1.0;
    // Paper-text form sigma(|beta e|) * gamma * e instead of the cited
    // source's sigma(|beta e|)^gamma * e.
    bool focalr_as_written = false;
    // Keep the extra 1/N factor of the as-written weighted MSE.
    bool wmse_extra_inv_n = true;
    double reg_coefficient = 0.0;

    void validate() const {
        if (focalr_beta <= 0) throw ValidationError("focalr_beta must be > 0");
        if (focalr_gamma < 0) throw ValidationError("focalr_gamma must be >= 0");
    }
};

struct LossValue {
    double value = 0.0;
    std::vector<double> grad;  // d value / d prediction
};

// Weighted regression loss: (1/N) * sum(w e) / sum(w) with e = (o-p)^2 (MSE)
// or |o-p| (L1); the leading 1/N drops when wmse_extra_inv_n is off.
LossValue wmse(const std::vector<double>& targets, const std::vector<double>& predictions,
               const std::vector<double>& weights, const LossConfig& cfg);

// FocalR on squared errors e_i: default sigmoid(|beta e|)^gamma * e, or the
// as-written sigmoid(|beta e|) * gamma * e; mean over samples, full product
// rule in the gradient.
LossValue focalr(const std::vector<double>& targets, const std::vector<double>& predictions,
                 const LossConfig& cfg);

// L_target = L_wmse + L_reg + L_focalr. reg_value is treated as a constant
// (rigid kernels do not train their point positions).
LossValue target_loss(const std::vector<double>& targets, const std::vector<double>& predictions,
                      const std::vector<double>& weights, double reg_value, const LossConfig& cfg);

struct TargetChannel {
    std::vector<double> targets;
    std::vector<double> predictions;
    std::vector<double> weights;
};

struct LossBreakdown {
    struct Component {
        double wmse = 0.0;
        double focalr = 0.0;
        double reg = 0.0;
    };
    std::array<Component, kMaterialCount> per_target;
    double total = 0.0;
    // gradient per channel, same layout as the inputs
    std::array<std::vector<double>, kMaterialCount> grad;

    std::string to_json(std::uint64_t step, double lr) const;
};

// L = sum over {bark, leaf, soil, misc} of the per-target losses.
LossBreakdown total_loss(const std::array<TargetChannel, kMaterialCount>& channels,
                         double reg_value, const LossConfig& cfg);

}  // namespace vf
