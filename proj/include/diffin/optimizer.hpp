#pragma once

// SGD, momentum SGD, and Adam update rules.
//
// Momentum convention: M' = (1-beta) * G + beta * M, theta' = theta - eta_t * M'.
// Adam keeps raw (non-bias-corrected) moments and applies the per-coordinate
// general learning rate
//     eta*_t = eta_t / ((1 - beta1) * (sqrt(vhat_t) + eps)),
//     vhat_t = G^2 + beta2 / (1 - beta2) * V_{t-1},
// so that theta' = theta - eta* . ((1-beta1) G + beta1 M_{t-1}) holds as an
// exact identity with step(). A textbook bias-corrected variant is available
// behind `bias_correction`; it does not satisfy that identity.

#include <cstdint>
#include <vector>

#include "diffin/common.hpp"

namespace diffin {

enum class OptimizerKind { sgd, sgd_momentum, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    double lr = 0.1;
    // multiplicative step decay: eta_t = lr * decay_factor^(t / decay_every)
    std::size_t decay_every = 0;  // 0 disables decay
    double decay_factor = 1.0;
    double beta = 0.9;    // sgd_momentum
    double beta1 = 0.9;   // adam
    double beta2 = 0.999; // adam
    double eps_adam = 1e-8;
    bool bias_correction = false;  // adam only

    double eta(std::size_t t) const;
    void validate() const;

    double momentum_weight() const {
        return kind == OptimizerKind::adam ? beta1 : beta;
    }
};

struct OptimizerState {
    std::size_t t = 0;
    ParamVector m;  // first moment (sgd_momentum, adam)
    ParamVector v;  // second moment (adam), entrywise >= 0

    static OptimizerState fresh(const OptimizerConfig& cfg, std::size_t p);
};

struct StepResult {
    ParamVector theta;
    OptimizerState state;
};

StepResult step(const OptimizerConfig& cfg, const OptimizerState& state, const ParamVector& theta,
                const ParamVector& grad);

/// Per-coordinate general learning rate for the Adam update at state.t given
/// the incoming gradient. state must be the pre-update state (V = V_{t-1}).
ParamVector adam_general_lr(const OptimizerConfig& cfg, const OptimizerState& state,
                            const ParamVector& grad);

/// History coefficient for the difference-term estimators. For sgd this is
/// the scalar a_{t,k} = -(eta_t * eta_k)^2 / N. For momentum it is
/// alpha_k^t = (1/N) * (prod_{k<a<t} eta_a * beta1) * eta_k * (1 - beta1).
/// The Adam variant takes per-step eta vectors and applies the same product
/// coordinatewise.
double alpha_coeff(const OptimizerConfig& cfg, std::size_t k, std::size_t t, std::size_t n);
ParamVector alpha_coeff_vec(const OptimizerConfig& cfg,
                            const std::vector<ParamVector>& eta_star_by_step, std::size_t k,
                            std::size_t t, std::size_t n);

}  // namespace diffin
