#include "diffin/optimizer.hpp"

#include <cmath>

namespace diffin {

double OptimizerConfig::eta(std::size_t t) const {
    if (decay_every == 0) return lr;
    double e = lr;
    for (std::size_t k = decay_every; k <= t; k += decay_every) e *= decay_factor;
    return e;
}

void OptimizerConfig::validate() const {
    if (lr <= 0.0 || lr > 1.0) throw InputError("learning rate must lie in (0, 1]");
    if (decay_every > 0 && (decay_factor <= 0.0 || decay_factor > 1.0))
        throw InputError("decay factor must lie in (0, 1]");
    if (beta < 0.0 || beta >= 1.0) throw InputError("momentum weight must lie in [0, 1)");
    if (beta1 < 0.0 || beta1 >= 1.0) throw InputError("beta1 must lie in [0, 1)");
    if (beta2 < 0.0 || beta2 >= 1.0) throw InputError("beta2 must lie in [0, 1)");
    if (eps_adam <= 0.0) throw InputError("eps_adam must be positive");
}

OptimizerState OptimizerState::fresh(const OptimizerConfig& cfg, std::size_t p) {
    OptimizerState st;
    st.t = 0;
    if (cfg.kind != OptimizerKind::sgd) st.m.assign(p, 0.0);
    if (cfg.kind == OptimizerKind::adam) st.v.assign(p, 0.0);
    return st;
}

StepResult step(const OptimizerConfig& cfg, const OptimizerState& state, const ParamVector& theta,
                const ParamVector& grad) {
    if (grad.size() != theta.size()) throw InputError("gradient length mismatch");
    if (!vec::all_finite(grad)) throw NumericalError("non-finite gradient");

    const double eta_t = cfg.eta(state.t);
    StepResult out;
    out.theta = theta;
    out.state = state;
    out.state.t = state.t + 1;

    switch (cfg.kind) {
        case OptimizerKind::sgd: {
            for (std::size_t i = 0; i < theta.size(); ++i) out.theta[i] = theta[i] - eta_t * grad[i];
            return out;
        }
        case OptimizerKind::sgd_momentum: {
            for (std::size_t i = 0; i < theta.size(); ++i) {
                double m = (1.0 - cfg.beta) * grad[i] + cfg.beta * state.m[i];
                out.state.m[i] = m;
                out.theta[i] = theta[i] - eta_t * m;
            }
            return out;
        }
        case OptimizerKind::adam: {
            if (cfg.bias_correction) {
                const std::size_t tt = state.t + 1;
                const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(tt));
                const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(tt));
                for (std::size_t i = 0; i < theta.size(); ++i) {
                    double m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
                    double v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                    out.state.m[i] = m;
                    out.state.v[i] = v;
                    out.theta[i] = theta[i] - eta_t * (m / c1) / (std::sqrt(v / c2) + cfg.eps_adam);
                }
                return out;
            }
            ParamVector eta_star = adam_general_lr(cfg, state, grad);
            for (std::size_t i = 0; i < theta.size(); ++i) {
                double m = (1.0 - cfg.beta1) * grad[i] + cfg.beta1 * state.m[i];
                double v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                out.state.m[i] = m;
                out.state.v[i] = v;
                out.theta[i] = theta[i] - eta_star[i] * m;
            }
            return out;
        }
    }
    throw InputError("unknown optimizer kind");
}

ParamVector adam_general_lr(const OptimizerConfig& cfg, const OptimizerState& state,
                            const ParamVector& grad) {
    if (cfg.kind != OptimizerKind::adam) throw UnsupportedError("general learning rate needs adam");
    if (state.v.size() != grad.size()) throw InputError("second-moment length mismatch");
    const double eta_t = cfg.eta(state.t);
    ParamVector eta_star(grad.size());
    for (std::size_t i = 0; i < grad.size(); ++i) {
        double vhat = grad[i] * grad[i] + cfg.beta2 / (1.0 - cfg.beta2) * state.v[i];
        eta_star[i] = eta_t / ((1.0 - cfg.beta1) * (std::sqrt(vhat) + cfg.eps_adam));
    }
    return eta_star;
}

double alpha_coeff(const OptimizerConfig& cfg, std::size_t k, std::size_t t, std::size_t n) {
    if (k > t) throw InputError("alpha_coeff requires k <= t");
    if (n == 0) throw InputError("alpha_coeff requires n >= 1");
    const double dn = static_cast<double>(n);
    if (cfg.kind == OptimizerKind::sgd) {
        double prod = cfg.eta(t) * cfg.eta(k);
        return -(prod * prod) / dn;
    }
    const double b = cfg.momentum_weight();
    double damp = 1.0;
    for (std::size_t a = k + 1; a < t; ++a) damp *= cfg.eta(a) * b;
    return damp * cfg.eta(k) * (1.0 - b) / dn;
}

ParamVector alpha_coeff_vec(const OptimizerConfig& cfg,
                            const std::vector<ParamVector>& eta_star_by_step, std::size_t k,
                            std::size_t t, std::size_t n) {
    if (cfg.kind != OptimizerKind::adam) throw UnsupportedError("vector alpha needs adam");
    if (k > t || t > eta_star_by_step.size()) throw InputError("alpha_coeff_vec step out of range");
    const double dn = static_cast<double>(n);
    const double b = cfg.beta1;
    ParamVector out(eta_star_by_step[k].size(), (1.0 - b) / dn);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= eta_star_by_step[k][i];
    for (std::size_t a = k + 1; a < t; ++a)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= eta_star_by_step[a][i] * b;
    return out;
}

}  // namespace diffin
