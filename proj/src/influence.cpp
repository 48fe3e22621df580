#include "diffin/influence.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

namespace diffin {

namespace {

// Accumulated scores estimate theta_{-z} - theta (and its loss deltas); the
// raw difference kernels carry the opposite orientation.
constexpr double kOrientation = -1.0;

std::vector<std::size_t> proxy_batch(const TrainingTrace& trace, const LabeledDataset& ds,
                                     std::size_t t, const BatchProxy& proxy) {
    if (proxy.kind == BatchProxy::Kind::recorded) {
        const Checkpoint& c = trace.at_step(t);
        if (c.batch_indices.empty())
            throw MissingArtifactError("no recorded batch for step " + std::to_string(t));
        return c.batch_indices;
    }
    const std::size_t size = std::min(ds.size(), proxy.batch_size);
    Rng rng(mix_seed(proxy.seed, 0xb24c8 + t));
    return rng.sample_without_replacement(0, ds.size(), size);
}

// Per-coordinate learning rate entering the update at checkpoint c: the
// schedule value for sgd/momentum, the general learning rate for adam.
ParamVector eta_hat(const TrainingTrace& trace, const Checkpoint& c, const ParamVector& g_batch) {
    const OptimizerConfig& opt = trace.config.optimizer;
    if (opt.kind == OptimizerKind::adam) {
        OptimizerState st = c.opt;
        st.t = c.t;
        return adam_general_lr(opt, st, g_batch);
    }
    return ParamVector(g_batch.size(), opt.eta(c.t));
}

inline double pair_coeff(double eta_t, double eta_k, double n) {
    double prod = eta_t * eta_k;
    return -(prod * prod) / n;
}

// Shared per-checkpoint quantities for one difference term.
struct StepCtx {
    const Checkpoint* ckpt = nullptr;
    std::vector<std::size_t> batch;
    ParamVector g_batch;
    ParamVector eta;     // eta-hat, per coordinate
    double mult = 1.0;   // momentum multiplicity (1 - beta1^t); 1 for sgd
};

StepCtx make_step_ctx(const TrainingTrace& trace, const LabeledDataset& ds, std::size_t t,
                      const DiffInConfig& cfg) {
    StepCtx ctx;
    ctx.ckpt = &trace.at_step(t);
    ctx.batch = proxy_batch(trace, ds, t, cfg.proxy);
    const ModelSpec& spec = trace.config.model;
    ctx.g_batch = grad_batch(spec, ctx.ckpt->theta, ds, ctx.batch);
    ctx.eta = eta_hat(trace, *ctx.ckpt, ctx.g_batch);
    const OptimizerConfig& opt = trace.config.optimizer;
    ctx.mult = opt.kind == OptimizerKind::sgd
                   ? 1.0
                   : 1.0 - std::pow(opt.momentum_weight(), static_cast<double>(t));
    return ctx;
}

// kernel body shared by the collapsed variants
ParamVector collapsed_term(const TrainingTrace& trace, const LabeledDataset& ds, std::size_t t,
                           std::size_t z_index, const DiffInConfig& cfg, const StepCtx& ctx) {
    const ModelSpec& spec = trace.config.model;
    const ParamVector& theta = ctx.ckpt->theta;
    const Sample z = ds.sample(z_index);

    ParamVector g_z = grad_sample(spec, theta, z);
    GradFn batch_fn = [&](const ParamVector& th) { return grad_batch(spec, th, ds, ctx.batch); };
    GradFn z_fn = [&](const ParamVector& th) { return grad_sample(spec, th, z); };

    ParamVector out = hvp_fd(batch_fn, theta, g_z, cfg.hvp);        // H_B G_z
    ParamVector hz = hvp_fd(z_fn, theta, ctx.g_batch, cfg.hvp);     // H_z G_B
    for (std::size_t i = 0; i < out.size(); ++i) {
        double sum = out[i] + hz[i];
        out[i] = -static_cast<double>(t) * ctx.eta[i] * ctx.eta[i] * ctx.mult * sum /
                 static_cast<double>(ds.size());
    }
    return out;
}

void require_full_plan(const TrainingTrace& trace, std::size_t t) {
    for (std::size_t k = 0; k <= t; ++k)
        if (!trace.has_step(k))
            throw MissingArtifactError("full-history mode needs every checkpoint up to " +
                                       std::to_string(t) + "; plan lacks step " +
                                       std::to_string(k));
}

// Full-history term with momentum smoothing; beta1 = 0 (all sgd traces)
// leaves the gradients untouched and reproduces the plain sum.
ParamVector full_term(const TrainingTrace& trace, const LabeledDataset& ds, std::size_t t,
                      std::size_t z_index, const DiffInConfig& cfg) {
    require_full_plan(trace, t);
    const ModelSpec& spec = trace.config.model;
    const OptimizerConfig& opt = trace.config.optimizer;
    const double b1 = opt.kind == OptimizerKind::sgd ? 0.0 : opt.momentum_weight();
    const Sample z = ds.sample(z_index);
    const double n = static_cast<double>(ds.size());
    const std::size_t p = trace.final_theta.size();

    std::vector<StepCtx> ctxs;
    ctxs.reserve(t + 1);
    for (std::size_t k = 0; k <= t; ++k) ctxs.push_back(make_step_ctx(trace, ds, k, cfg));

    // momentum-smoothed gradient histories
    std::vector<ParamVector> mz(t + 1), mb(t + 1);
    ParamVector run_z(p, 0.0), run_b(p, 0.0);
    for (std::size_t k = 0; k <= t; ++k) {
        ParamVector g_z = grad_sample(spec, ctxs[k].ckpt->theta, z);
        for (std::size_t i = 0; i < p; ++i) {
            run_z[i] = (1.0 - b1) * g_z[i] + b1 * run_z[i];
            run_b[i] = (1.0 - b1) * ctxs[k].g_batch[i] + b1 * run_b[i];
        }
        mz[k] = run_z;
        mb[k] = run_b;
    }

    ParamVector out(p, 0.0);
    for (std::size_t k = 0; k <= t; ++k) {
        const ParamVector& theta = ctxs[k].ckpt->theta;
        GradFn batch_fn = [&](const ParamVector& th) {
            return grad_batch(spec, th, ds, ctxs[k].batch);
        };
        GradFn z_fn = [&](const ParamVector& th) { return grad_sample(spec, th, z); };
        ParamVector h1 = hvp_fd(batch_fn, theta, mz[k], cfg.hvp);
        ParamVector h2 = hvp_fd(z_fn, theta, mb[k], cfg.hvp);
        for (std::size_t i = 0; i < p; ++i)
            out[i] += pair_coeff(ctxs[t].eta[i], ctxs[k].eta[i], n) * (h1[i] + h2[i]);
    }
    return out;
}

void check_sample(const LabeledDataset& ds, std::size_t z_index) {
    if (z_index >= ds.size()) throw InputError("sample index out of range");
}

// Difference term for one checkpoint under the configured mode.
ParamVector term_dispatch(const TrainingTrace& trace, const LabeledDataset& ds, std::size_t t,
                          std::size_t z_index, const DiffInConfig& cfg) {
    const bool stateful = trace.config.optimizer.kind != OptimizerKind::sgd;
    switch (cfg.mode) {
        case DiffInMode::collapsed_k_eq_t:
            return stateful ? diff_term_momentum(trace, ds, t, z_index, cfg)
                            : diff_term_collapsed(trace, ds, t, z_index, cfg);
        case DiffInMode::full_history:
        case DiffInMode::momentum_generalized:
            return stateful ? diff_term_momentum(trace, ds, t, z_index, cfg)
                            : diff_term_full(trace, ds, t, z_index, cfg);
    }
    throw InputError("unknown diff-in mode");
}

bool is_collapsed(const DiffInConfig& cfg, const TrainingTrace& trace) {
    if (cfg.mode == DiffInMode::collapsed_k_eq_t) return true;
    if (cfg.mode == DiffInMode::momentum_generalized) {
        // falls back to the collapsed rule when intermediate checkpoints are absent
        return trace.config.plan != CheckpointPlan::all;
    }
    return false;
}

std::vector<std::size_t> accumulation_steps(const TrainingTrace& trace, bool collapsed) {
    if (collapsed) return trace.influence_steps();
    std::vector<std::size_t> steps;
    for (std::size_t t = 0; t < trace.config.iterations; ++t) steps.push_back(t);
    return steps;
}

}  // namespace

ParamVector hvp_fd(const GradFn& grad_fn, const ParamVector& theta, const ParamVector& v,
                   const HvpConfig& cfg) {
    if (cfg.delta <= 0.0 || cfg.floor <= 0.0) throw InputError("hvp steps must be positive");
    if (!vec::all_finite(v)) throw InputError("non-finite hvp direction");
    const double nv = vec::norm(v);
    if (nv == 0.0) return ParamVector(theta.size(), 0.0);

    const double eps = std::max(cfg.floor, cfg.delta * vec::norm(theta) / (nv + cfg.floor));
    ParamVector shifted = theta;
    vec::axpy(shifted, eps, v);
    ParamVector g_plus = grad_fn(shifted);
    if (cfg.scheme == HvpConfig::Scheme::forward) {
        ParamVector g0 = grad_fn(theta);
        ParamVector out(theta.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (g_plus[i] - g0[i]) / eps;
        return out;
    }
    shifted = theta;
    vec::axpy(shifted, -eps, v);
    ParamVector g_minus = grad_fn(shifted);
    ParamVector out(theta.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (g_plus[i] - g_minus[i]) / (2.0 * eps);
    return out;
}

ParamVector diff_term_collapsed(const TrainingTrace& trace, const LabeledDataset& ds,
                                std::size_t t, std::size_t z_index, const DiffInConfig& cfg) {
    check_sample(ds, z_index);
    if (t == 0) return ParamVector(trace.final_theta.size(), 0.0);
    StepCtx ctx = make_step_ctx(trace, ds, t, cfg);
    return collapsed_term(trace, ds, t, z_index, cfg, ctx);
}

ParamVector diff_term_full(const TrainingTrace& trace, const LabeledDataset& ds, std::size_t t,
                           std::size_t z_index, const DiffInConfig& cfg) {
    check_sample(ds, z_index);
    return full_term(trace, ds, t, z_index, cfg);
}

ParamVector diff_term_momentum(const TrainingTrace& trace, const LabeledDataset& ds,
                               std::size_t t, std::size_t z_index, const DiffInConfig& cfg) {
    check_sample(ds, z_index);
    if (trace.config.optimizer.kind == OptimizerKind::sgd)
        throw UnsupportedError("momentum difference term needs sgd_momentum or adam");
    if (t == 0) return ParamVector(trace.final_theta.size(), 0.0);
    if (is_collapsed(cfg, trace)) {
        StepCtx ctx = make_step_ctx(trace, ds, t, cfg);
        return collapsed_term(trace, ds, t, z_index, cfg, ctx);
    }
    return full_term(trace, ds, t, z_index, cfg);
}

ParamVector influence_on_params(const TrainingTrace& trace, const LabeledDataset& ds,
                                std::size_t z_index, const DiffInConfig& cfg) {
    check_sample(ds, z_index);
    const bool collapsed = is_collapsed(cfg, trace);
    const std::vector<std::size_t> steps = accumulation_steps(trace, collapsed);
    ParamVector acc(trace.final_theta.size(), 0.0);
    for (std::size_t t : steps) {
        ParamVector d = term_dispatch(trace, ds, t, z_index, cfg);
        vec::axpy(acc, 1.0, d);
    }
    const double scale = collapsed ? kOrientation / static_cast<double>(steps.size())
                                   : kOrientation;
    vec::scale(acc, scale);
    return acc;
}

double influence_on_loss(const TrainingTrace& trace, const LabeledDataset& ds,
                         std::size_t z_index, const LabeledDataset& target_set,
                         const DiffInConfig& cfg) {
    check_sample(ds, z_index);
    if (target_set.size() == 0) throw InputError("empty target set");
    const bool collapsed = is_collapsed(cfg, trace);
    const std::vector<std::size_t> steps = accumulation_steps(trace, collapsed);
    KahanSum acc;
    for (std::size_t t : steps) {
        ParamVector d = term_dispatch(trace, ds, t, z_index, cfg);
        ParamVector vg = grad_set(trace.config.model, trace.at_step(t).theta, target_set);
        acc.add(vec::dot(vg, d));
    }
    const double scale = collapsed ? kOrientation / static_cast<double>(steps.size())
                                   : kOrientation;
    return scale * acc.value();
}

double self_influence(const TrainingTrace& trace, const LabeledDataset& ds, std::size_t z_index,
                      const DiffInConfig& cfg) {
    std::size_t one[] = {z_index};
    LabeledDataset self = ds.subset(one, "self");
    return influence_on_loss(trace, ds, z_index, self, cfg);
}

double tracin_score(const TrainingTrace& trace, const LabeledDataset& ds, std::size_t z_index,
                    const LabeledDataset& target_set) {
    check_sample(ds, z_index);
    if (target_set.size() == 0) throw InputError("empty target set");
    const ModelSpec& spec = trace.config.model;
    KahanSum acc;
    for (std::size_t t : trace.influence_steps()) {
        const Checkpoint& c = trace.at_step(t);
        ParamVector vg = grad_set(spec, c.theta, target_set);
        ParamVector gz = grad_sample(spec, c.theta, ds.sample(z_index));
        acc.add(trace.config.optimizer.eta(t) * vec::dot(vg, gz));
    }
    return acc.value();
}

double hutchinson_trace(const GradFn& grad_fn, const ParamVector& theta, std::size_t probes,
                        std::uint64_t seed, const HvpConfig& hvp) {
    if (probes == 0) throw InputError("need at least one probe");
    Rng rng(mix_seed(seed, 0x7ace));
    KahanSum acc;
    for (std::size_t k = 0; k < probes; ++k) {
        ParamVector v(theta.size());
        for (double& x : v) x = rng.uniform01() < 0.5 ? -1.0 : 1.0;
        acc.add(vec::dot(v, hvp_fd(grad_fn, theta, v, hvp)));
    }
    return acc.value() / static_cast<double>(probes);
}

namespace {

ParamVector solve_cg(const std::function<ParamVector(const ParamVector&)>& apply,
                     const ParamVector& b, std::size_t iters, double tol) {
    const double nb = vec::norm(b);
    ParamVector x(b.size(), 0.0);
    if (nb == 0.0) return x;
    ParamVector r = b;
    ParamVector p = r;
    double rs = vec::dot(r, r);
    for (std::size_t it = 0; it < iters; ++it) {
        ParamVector ap = apply(p);
        double denom = vec::dot(p, ap);
        if (denom <= 0.0 || !std::isfinite(denom))
            throw NumericalError("cg: operator not positive on search direction",
                                 std::sqrt(rs) / nb);
        double alpha = rs / denom;
        vec::axpy(x, alpha, p);
        vec::axpy(r, -alpha, ap);
        double rs_new = vec::dot(r, r);
        if (std::sqrt(rs_new) <= tol * nb) return x;
        double beta = rs_new / rs;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
        rs = rs_new;
    }
    throw NumericalError("cg: no convergence, relative residual " +
                             std::to_string(std::sqrt(rs) / nb),
                         std::sqrt(rs) / nb);
}

ParamVector solve_lissa(const std::function<ParamVector(const ParamVector&)>& apply,
                        const ParamVector& b, std::size_t depth, double scale) {
    if (scale <= 0.0) throw InputError("lissa scale must be positive");
    ParamVector r = b;
    for (std::size_t j = 0; j < depth; ++j) {
        ParamVector ar = apply(r);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = b[i] + r[i] - ar[i] / scale;
        if (!vec::all_finite(r)) throw NumericalError("lissa diverged at depth " + std::to_string(j));
    }
    vec::scale(r, 1.0 / scale);
    return r;
}

}  // namespace

double if_score(const TrainingTrace& trace, const LabeledDataset& ds, std::size_t z_index,
                const LabeledDataset& target_set, const IfSolverConfig& solver,
                const HvpConfig& hvp) {
    check_sample(ds, z_index);
    if (target_set.size() == 0) throw InputError("empty target set");
    const ModelSpec& spec = trace.config.model;
    const ParamVector& theta = trace.final_theta;

    ParamVector b = grad_sample(spec, theta, ds.sample(z_index));
    if (vec::norm(b) == 0.0) return 0.0;

    GradFn full_fn = [&](const ParamVector& th) { return grad_set(spec, th, ds); };
    double damping = solver.damping;
    if (damping < 0.0) {
        double tr = hutchinson_trace(full_fn, theta, 8, solver.seed, hvp);
        damping = 0.01 * std::abs(tr) / static_cast<double>(theta.size());
        if (damping <= 0.0) damping = 1e-6;
    }
    auto apply = [&](const ParamVector& v) {
        ParamVector hv = hvp_fd(full_fn, theta, v, hvp);
        vec::axpy(hv, damping, v);
        return hv;
    };

    ParamVector x = solver.kind == IfSolverConfig::Kind::cg
                        ? solve_cg(apply, b, solver.iters, solver.tol)
                        : solve_lissa(apply, b, solver.lissa_depth, solver.lissa_scale);
    ParamVector vg = grad_set(spec, theta, target_set);
    return vec::dot(vg, x) / static_cast<double>(ds.size());
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mu;
    const std::size_t count = std::min(workers, n);
    for (std::size_t w = 0; w < count; ++w) {
        pool.emplace_back([&]() {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n || failed.load()) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) error = std::current_exception();
                    failed.store(true);
                    return;
                }
            }
        });
    }
    for (std::thread& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

std::string target_name(Target t) {
    switch (t) {
        case Target::validation_loss: return "validation_loss";
        case Target::self_loss: return "self_loss";
        case Target::training_loss: return "training_loss";
        case Target::parameters: return "parameters";
    }
    return "validation_loss";
}

Target target_from_name(const std::string& s) {
    if (s == "validation_loss") return Target::validation_loss;
    if (s == "self_loss") return Target::self_loss;
    if (s == "training_loss") return Target::training_loss;
    if (s == "parameters") return Target::parameters;
    throw InputError("unknown target: " + s);
}

std::vector<InfluenceScore> score_all(const TrainingTrace& trace, const LabeledDataset& ds,
                                      const LabeledDataset& validation,
                                      const std::string& estimator, Target target,
                                      const DiffInConfig& cfg, const IfSolverConfig& solver,
                                      std::size_t workers) {
    if (estimator != "diffin" && estimator != "diffin_f" && estimator != "tracin" &&
        estimator != "if")
        throw InputError("unknown estimator: " + estimator);
    if (target == Target::parameters && (estimator == "tracin" || estimator == "if"))
        throw UnsupportedError(estimator + " cannot target parameters");
    if (target == Target::validation_loss && validation.size() == 0)
        throw InputError("validation target needs a non-empty validation set");

    // diffin_f scores from the final checkpoint only
    TrainingTrace final_only;
    const TrainingTrace* use = &trace;
    if (estimator == "diffin_f") {
        final_only = trace;
        std::vector<Checkpoint> kept;
        for (const Checkpoint& c : trace.checkpoints)
            if (c.t == 0 || c.t == trace.config.iterations) kept.push_back(c);
        final_only.checkpoints = std::move(kept);
        use = &final_only;
    }
    DiffInConfig diff_cfg = cfg;
    if (estimator == "diffin_f") diff_cfg.mode = DiffInMode::collapsed_k_eq_t;

    std::vector<InfluenceScore> out(ds.size());
    auto score_one = [&](std::size_t i) {
        InfluenceScore s;
        s.sample_index = i;
        s.estimator = estimator;
        s.target = target_name(target);
        const LabeledDataset* tgt = nullptr;
        std::size_t one[] = {i};
        LabeledDataset self;
        if (target == Target::self_loss) {
            self = ds.subset(one, "self");
            tgt = &self;
        } else if (target == Target::training_loss) {
            tgt = &ds;
        } else if (target == Target::validation_loss) {
            tgt = &validation;
        }
        if (estimator == "tracin") {
            s.value = tracin_score(*use, ds, i, *tgt);
        } else if (estimator == "if") {
            s.value = if_score(*use, ds, i, *tgt, solver, diff_cfg.hvp);
        } else if (target == Target::parameters) {
            s.params = influence_on_params(*use, ds, i, diff_cfg);
        } else {
            s.value = influence_on_loss(*use, ds, i, *tgt, diff_cfg);
        }
        out[i] = std::move(s);
    };
    parallel_for(ds.size(), workers, score_one);
    return out;
}

}  // namespace diffin
