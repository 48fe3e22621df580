#include "diffin/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "diffin/model.hpp"

namespace diffin {

namespace {

ExactInfluence retrain_without(const LabeledDataset& ds, const TrainConfig& cfg,
                               std::span<const std::size_t> removed,
                               const TrainingTrace& baseline,
                               std::span<const LabeledDataset* const> target_sets) {
    if (removed.empty()) throw InputError("nothing to remove");
    if (removed.size() >= ds.size()) throw InputError("removal leaves empty dataset");
    if (baseline.dataset_hash != ds.fingerprint())
        throw InputError("baseline trace does not match dataset");

    LabeledDataset reduced = ds.without_all(removed);
    TrainConfig sub_cfg = cfg;
    if (sub_cfg.batch_size > reduced.size()) sub_cfg.batch_size = reduced.size();
    // parent permutation with the removed slots deleted
    BatchSchedule schedule = reduced_schedule(
        cfg.seed, ds.size(), sub_cfg.batch_size,
        std::vector<std::size_t>(removed.begin(), removed.end()));
    TrainingTrace run = train_with_schedule(reduced, sub_cfg, schedule);
    if (run.diverged) throw NumericalError("retraining diverged");

    ExactInfluence out;
    out.removed.assign(removed.begin(), removed.end());
    std::sort(out.removed.begin(), out.removed.end());
    out.theta_minus = run.final_theta;
    out.influence_params = vec::sub(run.final_theta, baseline.final_theta);
    for (const LabeledDataset* tgt : target_sets) {
        double before = loss_set(cfg.model, baseline.final_theta, *tgt);
        double after = loss_set(cfg.model, run.final_theta, *tgt);
        out.delta_loss.push_back(after - before);
    }
    return out;
}

}  // namespace

ExactInfluence loo_retrain(const LabeledDataset& ds, const TrainConfig& cfg, std::size_t z_index,
                           const TrainingTrace& baseline,
                           std::span<const LabeledDataset* const> target_sets) {
    if (z_index >= ds.size()) throw InputError("sample index out of range");
    std::size_t one[] = {z_index};
    return retrain_without(ds, cfg, one, baseline, target_sets);
}

ExactInfluence group_retrain(const LabeledDataset& ds, const TrainConfig& cfg,
                             std::span<const std::size_t> indices, const TrainingTrace& baseline,
                             std::span<const LabeledDataset* const> target_sets) {
    return retrain_without(ds, cfg, indices, baseline, target_sets);
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw InputError("length mismatch");
    const std::size_t n = xs.size();
    if (n < 2) throw InputError("need at least two points");
    KahanSum sx, sy;
    for (std::size_t i = 0; i < n; ++i) {
        sx.add(xs[i]);
        sy.add(ys[i]);
    }
    const double mx = sx.value() / static_cast<double>(n);
    const double my = sy.value() / static_cast<double>(n);
    KahanSum sxy, sxx, syy;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy.add(dx * dy);
        sxx.add(dx * dx);
        syy.add(dy * dy);
    }
    if (sxx.value() <= 0.0 || syy.value() <= 0.0)
        throw NumericalError("pearson: zero variance input");
    return sxy.value() / std::sqrt(sxx.value() * syy.value());
}

std::vector<double> average_ranks(std::span<const double> xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (xs[a] != xs[b]) return xs[a] < xs[b];
        return a < b;
    });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
    std::vector<double> rx = average_ranks(xs);
    std::vector<double> ry = average_ranks(ys);
    return pearson(rx, ry);
}

double lds_score(const std::vector<std::vector<std::size_t>>& groups,
                 std::span<const double> per_sample_scores,
                 std::span<const double> exact_group_effects) {
    if (groups.size() < 2) throw InputError("need at least two groups");
    if (groups.size() != exact_group_effects.size())
        throw InputError("one exact effect per group required");
    std::vector<double> summed(groups.size(), 0.0);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        KahanSum s;
        for (std::size_t idx : groups[g]) {
            if (idx >= per_sample_scores.size()) throw InputError("group index out of range");
            s.add(per_sample_scores[idx]);
        }
        summed[g] = s.value();
    }
    return spearman(summed, exact_group_effects);
}

BoundConstants estimate_constants(const TrainingTrace& trace, const LabeledDataset& ds,
                                  std::size_t probes, std::uint64_t seed,
                                  std::span<const TrainingTrace* const> subset_traces) {
    BoundConstants c;
    c.iterations = trace.config.iterations;
    c.n = ds.size();
    const ModelSpec& spec = trace.config.model;

    for (const Checkpoint& ck : trace.checkpoints) {
        for (std::size_t i = 0; i < ds.size(); ++i)
            c.grad_norm = std::max(c.grad_norm,
                                   vec::norm(grad_sample(spec, ck.theta, ds.sample(i))));
        c.excursion = std::max(c.excursion,
                               vec::norm(vec::sub(ck.theta, trace.checkpoints.front().theta)));
    }
    for (const TrainingTrace* sub : subset_traces) {
        for (const Checkpoint& ck : sub->checkpoints)
            c.excursion = std::max(c.excursion,
                                   vec::norm(vec::sub(ck.theta, sub->checkpoints.front().theta)));
    }

    // probe pairs near the visited checkpoints; lower estimate of the true constant
    Rng rng(mix_seed(seed, 0x1195));
    const double radius = 0.1;
    for (std::size_t k = 0; k < probes; ++k) {
        const Checkpoint& ck = trace.checkpoints[rng.uniform_index(trace.checkpoints.size())];
        ParamVector a = ck.theta, b = ck.theta;
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] += radius * rng.normal();
            b[i] += radius * rng.normal();
        }
        double dist = vec::norm(vec::sub(a, b));
        if (dist == 0.0) continue;
        double gdist = vec::norm(vec::sub(grad_set(spec, a, ds), grad_set(spec, b, ds)));
        c.lipschitz = std::max(c.lipschitz, gdist / dist);
    }
    return c;
}

double error_bound(const BoundConstants& c) {
    if (c.lipschitz < 0 || c.grad_norm < 0 || c.excursion < 0)
        throw InputError("constants must be nonnegative");
    const double t = static_cast<double>(c.iterations);
    const double n = static_cast<double>(c.n);
    return 2.0 * t * t * c.lipschitz * (t + 1.0) * c.excursion + (t * t / n) * c.grad_norm;
}

std::string exact_influence_to_json(const ExactInfluence& e, std::uint64_t dataset_hash,
                                    std::uint64_t config_hash) {
    nlohmann::json j;
    j["dataset_hash"] = hash_hex(dataset_hash);
    j["config_hash"] = hash_hex(config_hash);
    j["removed"] = e.removed;
    j["theta_minus"] = e.theta_minus;
    j["influence_params"] = e.influence_params;
    j["delta_loss"] = e.delta_loss;
    return j.dump();
}

ExactInfluence exact_influence_from_json(const std::string& text, std::uint64_t dataset_hash,
                                         std::uint64_t config_hash) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (j.at("dataset_hash").get<std::string>() != hash_hex(dataset_hash) ||
        j.at("config_hash").get<std::string>() != hash_hex(config_hash))
        throw InputError("oracle cache entry does not match dataset/config");
    ExactInfluence e;
    e.removed = j.at("removed").get<std::vector<std::size_t>>();
    e.theta_minus = j.at("theta_minus").get<ParamVector>();
    e.influence_params = j.at("influence_params").get<ParamVector>();
    e.delta_loss = j.at("delta_loss").get<std::vector<double>>();
    return e;
}

}  // namespace diffin
