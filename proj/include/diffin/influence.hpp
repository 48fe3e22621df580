#pragma once

// Influence estimators over a training trace: the difference-accumulation
// estimator (with collapsed, full-history, and momentum/Adam variants), the
// finite-difference HVP kernel it is built on, and the TracIn and
// inverse-Hessian baselines.
//
// Sign convention: the raw difference kernels track theta - theta_{-z}
// step changes; accumulated influence targets theta_{-z} - theta (and the
// matching loss deltas), so the accumulators negate the kernel sum.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "diffin/common.hpp"
#include "diffin/dataset.hpp"
#include "diffin/model.hpp"
#include "diffin/trainer.hpp"

namespace diffin {

struct HvpConfig {
    enum class Scheme { forward, central };
    Scheme scheme = Scheme::central;
    double delta = 1e-3;  // relative step scale
    double floor = 1e-8;  // minimal absolute step
};

using GradFn = std::function<ParamVector(const ParamVector&)>;

/// Matrix-free Hessian-vector product by finite differences of grad_fn.
/// Step size eps = max(floor, delta * |theta| / (|v| + floor)).
/// v = 0 returns the zero vector without evaluating grad_fn.
ParamVector hvp_fd(const GradFn& grad_fn, const ParamVector& theta, const ParamVector& v,
                   const HvpConfig& cfg);

enum class DiffInMode { collapsed_k_eq_t, full_history, momentum_generalized };
enum class Target { validation_loss, self_loss, training_loss, parameters };

struct BatchProxy {
    enum class Kind { recorded, random };
    Kind kind = Kind::recorded;
    std::size_t batch_size = 64;  // random proxy: min(N, batch_size) samples
    std::uint64_t seed = 0;
};

struct DiffInConfig {
    DiffInMode mode = DiffInMode::collapsed_k_eq_t;
    BatchProxy proxy;
    HvpConfig hvp;
};

struct InfluenceScore {
    std::size_t sample_index = 0;
    std::string estimator;
    std::string target;
    double value = 0.0;
    ParamVector params;  // filled for the parameters target
};

// --- difference-term kernels (un-normalized, one checkpoint) ---------------

/// Collapsed single-checkpoint term: -t * eta_t^2 / N * (H_B G_z + H_z G_B),
/// with the per-coordinate general learning rate and the momentum
/// multiplicity factor (1 - beta1^t) for stateful optimizers.
ParamVector diff_term_collapsed(const TrainingTrace& trace, const LabeledDataset& ds,
                                std::size_t t, std::size_t z_index, const DiffInConfig& cfg);

/// Full-history term: sum_{k<=t} a_{t,k} (H_{B^k} G_z^k + H_z^k G_{B^k}),
/// a_{t,k} = -(eta_t eta_k)^2 / N. Requires checkpoint plan `all`.
ParamVector diff_term_full(const TrainingTrace& trace, const LabeledDataset& ds, std::size_t t,
                           std::size_t z_index, const DiffInConfig& cfg);

/// Momentum/Adam generalization. In full-history mode the per-step gradients
/// are replaced by their momentum-smoothed aggregates (the nested-sum
/// expansion of the update rule); in collapsed mode the smoothing collapses
/// to the checkpoint gradient weighted by the geometric mass (1 - beta1^t).
/// beta1 = 0 reproduces the SGD terms exactly.
ParamVector diff_term_momentum(const TrainingTrace& trace, const LabeledDataset& ds,
                               std::size_t t, std::size_t z_index, const DiffInConfig& cfg);

// --- accumulated influence --------------------------------------------------

/// Influence of sample z on the learned parameters, estimating
/// theta_{-z} - theta. Collapsed mode averages the sampled checkpoints
/// (1/m); full-history mode sums every step difference.
ParamVector influence_on_params(const TrainingTrace& trace, const LabeledDataset& ds,
                                std::size_t z_index, const DiffInConfig& cfg);

/// Influence of z on the mean loss of target_set (target_set = {z} gives
/// self-influence).
double influence_on_loss(const TrainingTrace& trace, const LabeledDataset& ds,
                         std::size_t z_index, const LabeledDataset& target_set,
                         const DiffInConfig& cfg);

double self_influence(const TrainingTrace& trace, const LabeledDataset& ds, std::size_t z_index,
                      const DiffInConfig& cfg);

// --- baselines ---------------------------------------------------------------

/// TracIn: sum_t eta_t <grad L(target, theta^t), grad l(z, theta^t)> over the
/// trace's sampled checkpoints (per-sample gradient form).
double tracin_score(const TrainingTrace& trace, const LabeledDataset& ds, std::size_t z_index,
                    const LabeledDataset& target_set);

struct IfSolverConfig {
    enum class Kind { cg, lissa };
    Kind kind = Kind::cg;
    std::size_t iters = 100;
    double tol = 1e-5;       // relative residual target (cg)
    double damping = -1.0;   // < 0: auto 0.01 * tr(H) / p via Hutchinson probes
    std::size_t lissa_depth = 200;
    double lissa_scale = 10.0;
    std::uint64_t seed = 99;
};

/// Final-checkpoint inverse-Hessian baseline:
/// (1/N) <grad L(target, theta*), x> where (H + damping I) x = grad l(z, theta*).
double if_score(const TrainingTrace& trace, const LabeledDataset& ds, std::size_t z_index,
                const LabeledDataset& target_set, const IfSolverConfig& solver,
                const HvpConfig& hvp);

/// Hutchinson trace estimate of the loss Hessian at theta.
double hutchinson_trace(const GradFn& grad_fn, const ParamVector& theta, std::size_t probes,
                        std::uint64_t seed, const HvpConfig& hvp);

// --- batched scoring ----------------------------------------------------------

/// Score every training sample with the named estimator
/// ({diffin, diffin_f, tracin, if}) against the target. Runs on a worker
/// pool; results are ordered by sample index regardless of worker count.
std::vector<InfluenceScore> score_all(const TrainingTrace& trace, const LabeledDataset& ds,
                                      const LabeledDataset& validation,
                                      const std::string& estimator, Target target,
                                      const DiffInConfig& cfg, const IfSolverConfig& solver,
                                      std::size_t workers);

std::string target_name(Target t);
Target target_from_name(const std::string& s);

/// Run fn(i) for i in [0, n) on `workers` threads.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace diffin
