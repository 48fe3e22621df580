#include "diffin/tasks.hpp"

#include <algorithm>
#include <numeric>

#include "diffin/model.hpp"

namespace diffin {

namespace {

// suspect order: first element is the strongest suspect
std::vector<std::size_t> suspect_order(const std::vector<InfluenceScore>& scores) {
    if (scores.empty()) throw InputError("no scores");
    const bool descending = scores.front().target == "self_loss";
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        double va = scores[a].value, vb = scores[b].value;
        if (va != vb) return descending ? va > vb : va < vb;
        return scores[a].sample_index < scores[b].sample_index;
    });
    return order;
}

}  // namespace

CleaningReport clean(const std::vector<InfluenceScore>& scores, const NoiseMask& mask,
                     const std::vector<double>& rates) {
    if (scores.empty()) throw InputError("no scores");
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (scores[i].sample_index != i)
            throw InputError("scores must cover samples 0..N-1 in order");
    for (double r : rates)
        if (r < 0.0 || r > 1.0) throw InputError("selection rate outside [0,1]");

    const std::size_t n = scores.size();
    const std::size_t n_flipped = mask.flipped.size();
    std::vector<std::size_t> order = suspect_order(scores);

    CleaningReport rep;
    rep.estimator = scores.front().estimator;
    rep.target = scores.front().target;
    rep.rates = rates;
    for (double r : rates) {
        const std::size_t selected = round_count(r * static_cast<double>(n));
        std::size_t found = 0;
        for (std::size_t i = 0; i < selected; ++i)
            if (mask.is_flipped(scores[order[i]].sample_index)) ++found;
        rep.precision_selected.push_back(
            selected == 0 ? 0.0 : 100.0 * static_cast<double>(found) / static_cast<double>(selected));
        rep.precision_all_noise.push_back(
            n_flipped == 0 ? 0.0
                           : 100.0 * static_cast<double>(found) / static_cast<double>(n_flipped));
    }
    return rep;
}

ParamVector delete_edit(const ParamVector& theta_star,
                        const std::map<std::size_t, ParamVector>& influence_params,
                        const std::vector<std::size_t>& z) {
    ParamVector edited = theta_star;
    for (std::size_t idx : z) {
        auto it = influence_params.find(idx);
        if (it == influence_params.end())
            throw MissingArtifactError("no influence vector for sample " + std::to_string(idx));
        vec::axpy(edited, 1.0, it->second);
    }
    return edited;
}

DeletionReport run_deletion(const TrainingTrace& trace, const LabeledDataset& train_set,
                            const std::map<std::size_t, ParamVector>& influence_params,
                            const std::vector<std::size_t>& z, const LabeledDataset& eval_set) {
    const ModelSpec& spec = trace.config.model;
    DeletionReport rep;
    rep.accuracy_noisy = accuracy(spec, trace.final_theta, eval_set);

    ParamVector edited = delete_edit(trace.final_theta, influence_params, z);
    rep.accuracy_edited = accuracy(spec, edited, eval_set);

    if (z.empty()) {
        rep.accuracy_oracle = rep.accuracy_noisy;
        rep.recovery_ratio = 0.0;
        return rep;
    }
    ExactInfluence oracle = group_retrain(train_set, trace.config, z, trace, {});
    rep.accuracy_oracle = accuracy(spec, oracle.theta_minus, eval_set);
    const double gap = rep.accuracy_oracle - rep.accuracy_noisy;
    rep.recovery_ratio = gap == 0.0 ? 0.0 : (rep.accuracy_edited - rep.accuracy_noisy) / gap;
    return rep;
}

std::uint64_t coreset_retrain_seed(std::uint64_t base_seed,
                                   const std::vector<std::size_t>& retained) {
    std::uint64_t h = fnv1a(retained.data(), retained.size() * sizeof(std::size_t));
    return mix_seed(base_seed, h);
}

CoresetReport coreset(const std::vector<InfluenceScore>& scores_train_loss, double ratio,
                      const LabeledDataset& ds, const TrainConfig& cfg,
                      const LabeledDataset& eval_set) {
    if (ratio <= 0.0 || ratio > 1.0) throw InputError("coreset ratio must lie in (0, 1]");
    if (scores_train_loss.size() != ds.size())
        throw InputError("need one training-loss score per sample");
    const std::size_t keep = round_count(ratio * static_cast<double>(ds.size()));
    if (keep == 0) throw InputError("coreset is empty at this ratio");

    // highest influence on training loss first; ties by ascending index
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        double va = scores_train_loss[a].value, vb = scores_train_loss[b].value;
        if (va != vb) return va > vb;
        return a < b;
    });
    order.resize(keep);
    std::sort(order.begin(), order.end());

    CoresetReport rep;
    rep.ratio = ratio;
    rep.retained = order;

    LabeledDataset core = ds.subset(order, ds.name() + "-coreset");
    TrainConfig sub_cfg = cfg;
    sub_cfg.seed = coreset_retrain_seed(cfg.seed, order);
    rep.retrain_seed = sub_cfg.seed;
    if (sub_cfg.batch_size > core.size()) sub_cfg.batch_size = core.size();
    TrainingTrace run = train(core, sub_cfg);
    if (run.diverged) throw NumericalError("coreset retraining diverged");
    rep.retrained_accuracy = accuracy(cfg.model, run.final_theta, eval_set);
    return rep;
}

}  // namespace diffin
