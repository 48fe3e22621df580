#include "diffin/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace fs = std::filesystem;

namespace diffin {

void TrainConfig::validate(std::size_t n) const {
    model.validate();
    optimizer.validate();
    if (iterations < 1) throw InputError("iterations must be >= 1");
    if (batch_size < 1 || batch_size > n) throw InputError("batch_size must lie in [1, N]");
    if (plan == CheckpointPlan::uniform) {
        if (plan_m < 1 || plan_m > iterations) throw InputError("checkpoint count m must lie in [1, T]");
    }
}

std::uint64_t TrainConfig::fingerprint() const {
    std::string s = spec_to_json(model);
    std::uint64_t h = fnv1a(s.data(), s.size());
    double nums[] = {optimizer.lr,
                     static_cast<double>(optimizer.decay_every),
                     optimizer.decay_factor,
                     optimizer.beta,
                     optimizer.beta1,
                     optimizer.beta2,
                     optimizer.eps_adam,
                     static_cast<double>(optimizer.kind),
                     static_cast<double>(optimizer.bias_correction),
                     static_cast<double>(batch_size),
                     static_cast<double>(iterations),
                     static_cast<double>(seed),
                     static_cast<double>(plan),
                     static_cast<double>(plan_m)};
    return fnv1a(nums, sizeof(nums), h);
}

const Checkpoint& TrainingTrace::at_step(std::size_t t) const {
    for (const Checkpoint& c : checkpoints)
        if (c.t == t) return c;
    throw MissingArtifactError("checkpoint " + std::to_string(t) + " not stored in trace");
}

bool TrainingTrace::has_step(std::size_t t) const {
    for (const Checkpoint& c : checkpoints)
        if (c.t == t) return true;
    return false;
}

std::vector<std::size_t> TrainingTrace::influence_steps() const {
    std::vector<std::size_t> out;
    for (const Checkpoint& c : checkpoints)
        if (c.t > 0) out.push_back(c.t);
    return out;
}

std::vector<std::size_t> sample_timesteps(std::size_t T, std::size_t m, std::uint64_t seed) {
    if (m < 1 || m > T) throw InputError("need 1 <= m <= T");
    Rng rng(mix_seed(seed, 0x715));
    // T is always included; the rest are drawn from {1..T-1}
    std::vector<std::size_t> picks = rng.sample_without_replacement(1, T, m - 1);
    picks.push_back(T);
    return picks;
}

std::vector<std::size_t> batch_for_step(std::uint64_t seed, std::size_t n,
                                        std::size_t batch_size, std::size_t t) {
    const std::size_t per_epoch = (n + batch_size - 1) / batch_size;
    const std::size_t epoch = t / per_epoch;
    const std::size_t slot = t % per_epoch;
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng rng(mix_seed(seed, 0xba7c4 + epoch));
    rng.shuffle(perm);
    const std::size_t lo = slot * batch_size;
    const std::size_t hi = std::min(lo + batch_size, n);
    return std::vector<std::size_t>(perm.begin() + static_cast<std::ptrdiff_t>(lo),
                                    perm.begin() + static_cast<std::ptrdiff_t>(hi));
}

BatchSchedule reduced_schedule(std::uint64_t seed, std::size_t parent_n, std::size_t batch_size,
                               std::vector<std::size_t> removed) {
    std::sort(removed.begin(), removed.end());
    const std::size_t n = parent_n - removed.size();
    if (n == 0) throw InputError("reduced schedule has no surviving samples");
    const std::size_t per_epoch = (n + batch_size - 1) / batch_size;
    return [seed, parent_n, batch_size, per_epoch, removed](std::size_t t) {
        const std::size_t epoch = t / per_epoch;
        const std::size_t slot = t % per_epoch;
        std::vector<std::size_t> perm(parent_n);
        for (std::size_t i = 0; i < parent_n; ++i) perm[i] = i;
        Rng rng(mix_seed(seed, 0xba7c4 + epoch));
        rng.shuffle(perm);
        // drop removed slots from the permuted sequence, renumber survivors
        std::vector<std::size_t> order;
        order.reserve(parent_n - removed.size());
        for (std::size_t orig : perm) {
            auto it = std::lower_bound(removed.begin(), removed.end(), orig);
            if (it != removed.end() && *it == orig) continue;
            order.push_back(orig - static_cast<std::size_t>(it - removed.begin()));
        }
        const std::size_t lo = slot * batch_size;
        const std::size_t hi = std::min(lo + batch_size, order.size());
        return std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                        order.begin() + static_cast<std::ptrdiff_t>(hi));
    };
}

namespace {

std::set<std::size_t> checkpoint_steps(const TrainConfig& cfg) {
    std::set<std::size_t> steps = {0, cfg.iterations};
    switch (cfg.plan) {
        case CheckpointPlan::all:
            for (std::size_t t = 0; t <= cfg.iterations; ++t) steps.insert(t);
            break;
        case CheckpointPlan::uniform:
            for (std::size_t t : sample_timesteps(cfg.iterations, cfg.plan_m, cfg.seed))
                steps.insert(t);
            break;
        case CheckpointPlan::last_only:
            break;
    }
    return steps;
}

Checkpoint snapshot(std::size_t t, const ParamVector& theta, const OptimizerState& st,
                    const BatchSchedule& schedule) {
    Checkpoint c;
    c.t = t;
    c.theta = theta;
    c.opt = st;
    c.batch_indices = schedule(t);
    return c;
}

}  // namespace

TrainingTrace train(const LabeledDataset& ds, const TrainConfig& cfg) {
    const std::uint64_t seed = cfg.seed;
    const std::size_t n = ds.size();
    const std::size_t bs = cfg.batch_size;
    return train_with_schedule(ds, cfg, [seed, n, bs](std::size_t t) {
        return batch_for_step(seed, n, bs, t);
    });
}

TrainingTrace train_with_schedule(const LabeledDataset& ds, const TrainConfig& cfg,
                                  const BatchSchedule& schedule) {
    cfg.validate(ds.size());
    const std::set<std::size_t> want = checkpoint_steps(cfg);

    TrainingTrace trace;
    trace.config = cfg;
    trace.dataset_hash = ds.fingerprint();
    trace.dataset_size = ds.size();

    ParamVector theta = init_params(cfg.model, cfg.seed);
    OptimizerState st = OptimizerState::fresh(cfg.optimizer, theta.size());
    if (want.count(0)) trace.checkpoints.push_back(snapshot(0, theta, st, schedule));

    for (std::size_t t = 0; t < cfg.iterations; ++t) {
        std::vector<std::size_t> batch = schedule(t);
        double batch_loss = loss_batch(cfg.model, theta, ds, batch);
        ParamVector grad = grad_batch(cfg.model, theta, ds, batch);
        if (!std::isfinite(batch_loss) || !vec::all_finite(grad)) {
            trace.diverged = true;
            break;
        }
        trace.loss_curve.push_back(batch_loss);
        StepResult next = step(cfg.optimizer, st, theta, grad);
        theta = std::move(next.theta);
        st = std::move(next.state);
        if (!vec::all_finite(theta)) {
            trace.diverged = true;
            break;
        }
        if (want.count(t + 1))
            trace.checkpoints.push_back(snapshot(t + 1, theta, st, schedule));
    }
    trace.final_theta = theta;
    return trace;
}

ParamVector replay_from(const TrainingTrace& trace, std::size_t t,
                        const LabeledDataset& ds_variant) {
    const Checkpoint& start = trace.at_step(t);
    const TrainConfig& cfg = trace.config;
    const std::size_t n = ds_variant.size();
    if (cfg.batch_size > n) throw InputError("batch_size exceeds variant dataset size");

    ParamVector theta = start.theta;
    OptimizerState st = start.opt;
    for (std::size_t k = t; k < cfg.iterations; ++k) {
        std::vector<std::size_t> batch = batch_for_step(cfg.seed, n, cfg.batch_size, k);
        ParamVector grad = grad_batch(cfg.model, theta, ds_variant, batch);
        StepResult next = step(cfg.optimizer, st, theta, grad);
        theta = std::move(next.theta);
        st = std::move(next.state);
        if (!vec::all_finite(theta)) throw NumericalError("replay diverged at step " + std::to_string(k));
    }
    return theta;
}

std::uint64_t trace_hash(const TrainingTrace& trace) {
    std::uint64_t h = fnv1a_doubles(trace.final_theta);
    for (const Checkpoint& c : trace.checkpoints) {
        h = fnv1a(&c.t, sizeof(c.t), h);
        h = fnv1a_doubles(c.theta, h);
    }
    h = fnv1a_doubles(trace.loss_curve, h);
    return h;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

nlohmann::json optimizer_to_json(const OptimizerConfig& o) {
    nlohmann::json j;
    switch (o.kind) {
        case OptimizerKind::sgd: j["kind"] = "sgd"; break;
        case OptimizerKind::sgd_momentum: j["kind"] = "sgd_momentum"; break;
        case OptimizerKind::adam: j["kind"] = "adam"; break;
    }
    j["lr"] = o.lr;
    j["decay_every"] = o.decay_every;
    j["decay_factor"] = o.decay_factor;
    j["beta"] = o.beta;
    j["beta1"] = o.beta1;
    j["beta2"] = o.beta2;
    j["eps_adam"] = o.eps_adam;
    j["bias_correction"] = o.bias_correction;
    return j;
}

OptimizerConfig optimizer_from_json(const nlohmann::json& j) {
    OptimizerConfig o;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "sgd")
        o.kind = OptimizerKind::sgd;
    else if (kind == "sgd_momentum")
        o.kind = OptimizerKind::sgd_momentum;
    else if (kind == "adam")
        o.kind = OptimizerKind::adam;
    else
        throw InputError("unknown optimizer kind: " + kind);
    o.lr = j.value("lr", 0.1);
    o.decay_every = j.value("decay_every", std::size_t{0});
    o.decay_factor = j.value("decay_factor", 1.0);
    o.beta = j.value("beta", 0.9);
    o.beta1 = j.value("beta1", 0.9);
    o.beta2 = j.value("beta2", 0.999);
    o.eps_adam = j.value("eps_adam", 1e-8);
    o.bias_correction = j.value("bias_correction", false);
    return o;
}

const char* plan_name(CheckpointPlan p) {
    switch (p) {
        case CheckpointPlan::uniform: return "uniform";
        case CheckpointPlan::all: return "all";
        case CheckpointPlan::last_only: return "last_only";
    }
    return "uniform";
}

CheckpointPlan plan_from_name(const std::string& s) {
    if (s == "uniform") return CheckpointPlan::uniform;
    if (s == "all") return CheckpointPlan::all;
    if (s == "last_only") return CheckpointPlan::last_only;
    throw InputError("unknown checkpoint plan: " + s);
}

}  // namespace

void save_trace(const TrainingTrace& trace, const std::string& dir) {
    fs::create_directories(dir);
    const TrainConfig& cfg = trace.config;

    nlohmann::json j;
    j["schema"] = 1;
    j["model"] = nlohmann::json::parse(spec_to_json(cfg.model));
    j["optimizer"] = optimizer_to_json(cfg.optimizer);
    j["trainer"] = {{"batch_size", cfg.batch_size},
                    {"iterations", cfg.iterations},
                    {"seed", cfg.seed},
                    {"plan", plan_name(cfg.plan)},
                    {"plan_m", cfg.plan_m}};
    j["dataset_hash"] = hash_hex(trace.dataset_hash);
    j["dataset_size"] = trace.dataset_size;
    std::vector<std::size_t> steps;
    for (const Checkpoint& c : trace.checkpoints) steps.push_back(c.t);
    j["steps"] = steps;
    j["diverged"] = trace.diverged;
    j["loss_curve"] = trace.loss_curve;
    j["final_hash"] = hash_hex(fnv1a_doubles(trace.final_theta));
    j["trace_hash"] = hash_hex(trace_hash(trace));

    std::ofstream(dir + "/trace.json") << j.dump(2) << "\n";

    nlohmann::json sidecar;
    sidecar["spec"] = nlohmann::json::parse(spec_to_json(cfg.model));
    sidecar["p"] = trace.final_theta.size();
    sidecar["layout_version"] = 1;
    std::ofstream(dir + "/params.json") << sidecar.dump(2) << "\n";

    nlohmann::json batches = nlohmann::json::object();
    for (const Checkpoint& c : trace.checkpoints)
        batches[std::to_string(c.t)] = c.batch_indices;
    std::ofstream(dir + "/batches.json") << batches.dump() << "\n";

    save_params(dir + "/final.bin", trace.final_theta);
    for (const Checkpoint& c : trace.checkpoints) {
        std::string base = dir + "/ckpt_" + std::to_string(c.t);
        save_params(base + ".bin", c.theta);
        if (!c.opt.m.empty()) {
            ParamVector opt = c.opt.m;
            opt.insert(opt.end(), c.opt.v.begin(), c.opt.v.end());
            save_params(base + ".opt.bin", opt);
        }
    }
}

TrainingTrace load_trace(const std::string& dir, const LabeledDataset& expected_ds) {
    std::ifstream in(dir + "/trace.json");
    if (!in) throw MissingArtifactError("missing trace.json in " + dir);
    nlohmann::json j = nlohmann::json::parse(in);

    TrainingTrace trace;
    TrainConfig cfg;
    cfg.model = spec_from_json(j.at("model").dump());
    cfg.optimizer = optimizer_from_json(j.at("optimizer"));
    cfg.batch_size = j.at("trainer").at("batch_size").get<std::size_t>();
    cfg.iterations = j.at("trainer").at("iterations").get<std::size_t>();
    cfg.seed = j.at("trainer").at("seed").get<std::uint64_t>();
    cfg.plan = plan_from_name(j.at("trainer").at("plan").get<std::string>());
    cfg.plan_m = j.at("trainer").at("plan_m").get<std::size_t>();
    trace.config = cfg;
    trace.dataset_size = j.at("dataset_size").get<std::size_t>();
    trace.diverged = j.at("diverged").get<bool>();
    trace.loss_curve = j.at("loss_curve").get<std::vector<double>>();

    std::string stored_hash = j.at("dataset_hash").get<std::string>();
    trace.dataset_hash = expected_ds.fingerprint();
    if (hash_hex(trace.dataset_hash) != stored_hash)
        throw InputError("dataset fingerprint mismatch for trace in " + dir);

    std::ifstream bin(dir + "/batches.json");
    if (!bin) throw MissingArtifactError("missing batches.json in " + dir);
    nlohmann::json batches = nlohmann::json::parse(bin);

    for (std::size_t t : j.at("steps").get<std::vector<std::size_t>>()) {
        Checkpoint c;
        c.t = t;
        std::string base = dir + "/ckpt_" + std::to_string(t);
        c.theta = load_params(base + ".bin");
        c.opt.t = t;
        if (fs::exists(base + ".opt.bin")) {
            ParamVector opt = load_params(base + ".opt.bin");
            const std::size_t p = c.theta.size();
            if (opt.size() == p) {
                c.opt.m.assign(opt.begin(), opt.end());
            } else if (opt.size() == 2 * p) {
                c.opt.m.assign(opt.begin(), opt.begin() + static_cast<std::ptrdiff_t>(p));
                c.opt.v.assign(opt.begin() + static_cast<std::ptrdiff_t>(p), opt.end());
            } else {
                throw InputError("corrupt optimizer snapshot: " + base);
            }
        }
        c.batch_indices = batches.at(std::to_string(t)).get<std::vector<std::size_t>>();
        trace.checkpoints.push_back(std::move(c));
    }
    trace.final_theta = load_params(dir + "/final.bin");
    return trace;
}

}  // namespace diffin
