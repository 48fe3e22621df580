#include <doctest.h>

#include <cmath>

#include "diffin/model.hpp"
#include "diffin/tasks.hpp"

using namespace diffin;

namespace {

std::vector<InfluenceScore> make_scores(const std::vector<double>& values,
                                        const std::string& target) {
    std::vector<InfluenceScore> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i].sample_index = i;
        out[i].estimator = "diffin";
        out[i].target = target;
        out[i].value = values[i];
    }
    return out;
}

NoiseMask mask_for(const std::vector<std::size_t>& flipped, std::size_t n) {
    NoiseMask mask;
    mask.rate = static_cast<double>(flipped.size()) / static_cast<double>(n);
    mask.flipped = flipped;
    for (std::size_t idx : flipped) mask.original_labels[idx] = 0;
    return mask;
}

}  // namespace

TEST_CASE("clean: a perfect self-influence ranking scores 100 at the noise rate") {
    const std::size_t n = 10;
    std::vector<double> values(n, 0.0);
    std::vector<std::size_t> flipped = {2, 7};
    for (std::size_t idx : flipped) values[idx] = 10.0;  // flips on top
    CleaningReport rep = clean(make_scores(values, "self_loss"), mask_for(flipped, n), {0.2});
    CHECK(rep.precision_selected[0] == doctest::Approx(100.0));
    CHECK(rep.precision_all_noise[0] == doctest::Approx(100.0));
}

TEST_CASE("clean: validation influence flags the most negative scores first") {
    const std::size_t n = 10;
    std::vector<double> values(n, 0.0);
    std::vector<std::size_t> flipped = {1, 8};
    values[1] = -5.0;
    values[8] = -4.0;
    values[3] = +6.0;  // big positive must NOT be flagged
    CleaningReport rep = clean(make_scores(values, "validation_loss"), mask_for(flipped, n),
                               {0.2});
    CHECK(rep.precision_selected[0] == doctest::Approx(100.0));
}

TEST_CASE("clean: random scores hover near the noise rate at matching selection") {
    const std::size_t n = 200;
    std::vector<std::size_t> flipped;
    for (std::size_t i = 0; i < 40; ++i) flipped.push_back(i * 5);  // 20 percent
    double total = 0.0;
    Rng rng(123);
    const int draws = 40;
    for (int d = 0; d < draws; ++d) {
        std::vector<double> values(n);
        for (double& v : values) v = rng.uniform01();
        CleaningReport rep = clean(make_scores(values, "self_loss"), mask_for(flipped, n), {0.2});
        total += rep.precision_selected[0];
    }
    CHECK(total / draws == doctest::Approx(20.0).epsilon(0.25));
}

TEST_CASE("clean: equal scores fall back to a deterministic index tie-break") {
    const std::size_t n = 10;
    std::vector<double> values(n, 1.0);
    NoiseMask mask = mask_for({0, 5}, n);
    CleaningReport a = clean(make_scores(values, "self_loss"), mask, {0.3});
    CleaningReport b = clean(make_scores(values, "self_loss"), mask, {0.3});
    CHECK(a.precision_selected == b.precision_selected);
    // lowest indices selected first: {0,1,2} catches exactly one flip
    CHECK(a.precision_selected[0] == doctest::Approx(100.0 / 3.0));
}

TEST_CASE("clean: selecting everything finds everything") {
    const std::size_t n = 20;
    std::vector<double> values(n);
    Rng rng(5);
    for (double& v : values) v = rng.normal();
    NoiseMask mask = mask_for({1, 6, 11, 16}, n);
    CleaningReport rep = clean(make_scores(values, "self_loss"), mask, {1.0});
    CHECK(rep.precision_all_noise[0] == doctest::Approx(100.0));
    // precision over selected equals the noise rate (fraction scale: 0.2)
    CHECK(rep.precision_selected[0] == doctest::Approx(100.0 * 4.0 / 20.0));
}

TEST_CASE("clean input validation") {
    std::vector<double> values = {1.0, 2.0};
    NoiseMask mask = mask_for({0}, 2);
    CHECK_THROWS_AS(clean(make_scores(values, "self_loss"), mask, {1.5}), InputError);
    auto scores = make_scores(values, "self_loss");
    scores[1].sample_index = 7;
    CHECK_THROWS_AS(clean(scores, mask, {0.5}), InputError);
}

TEST_CASE("delete_edit: empty set is the identity, edits add linearly") {
    ParamVector theta = {1.0, -2.0, 3.0};
    std::map<std::size_t, ParamVector> vecs;
    vecs[0] = {0.1, 0.0, -0.1};
    vecs[1] = {0.0, 0.5, 0.0};
    vecs[2] = {-0.2, 0.0, 0.2};

    CHECK(delete_edit(theta, vecs, {}) == theta);

    ParamVector all = delete_edit(theta, vecs, {0, 1, 2});
    ParamVector ab = delete_edit(theta, vecs, {0, 1});
    ParamVector c = delete_edit(theta, vecs, {2});
    for (std::size_t i = 0; i < theta.size(); ++i)
        CHECK(all[i] == doctest::Approx(ab[i] + c[i] - theta[i]));

    CHECK_THROWS_AS(delete_edit(theta, vecs, {9}), MissingArtifactError);
}

TEST_CASE("coreset: ratio one reproduces full-data accuracy under the derived seed") {
    LabeledDataset ds = make_synthetic(SyntheticKind::two_gaussians, 60, 1.0, 4);
    LabeledDataset test = make_synthetic(SyntheticKind::two_gaussians, 40, 1.0, 5);
    TrainConfig cfg;
    cfg.model = {.architecture = Architecture::logistic, .d_in = 2, .num_classes = 2};
    cfg.optimizer = {.kind = OptimizerKind::sgd, .lr = 0.2};
    cfg.batch_size = 15;
    cfg.iterations = 60;
    cfg.seed = 8;
    cfg.plan = CheckpointPlan::last_only;

    std::vector<double> values(ds.size());
    Rng rng(2);
    for (double& v : values) v = rng.normal();
    auto scores = make_scores(values, "training_loss");

    CoresetReport rep = coreset(scores, 1.0, ds, cfg, test);
    CHECK(rep.retained.size() == ds.size());

    TrainConfig derived = cfg;
    derived.seed = coreset_retrain_seed(cfg.seed, rep.retained);
    CHECK(rep.retrain_seed == derived.seed);
    double want = accuracy(cfg.model, train(ds, derived).final_theta, test);
    CHECK(rep.retrained_accuracy == doctest::Approx(want));

    CoresetReport again = coreset(scores, 1.0, ds, cfg, test);
    CHECK(again.retrained_accuracy == rep.retrained_accuracy);
}

TEST_CASE("coreset: keeps the top scores with index tie-breaks at the cutoff") {
    LabeledDataset ds = make_synthetic(SyntheticKind::two_gaussians, 10, 1.0, 4);
    LabeledDataset test = make_synthetic(SyntheticKind::two_gaussians, 10, 1.0, 5);
    TrainConfig cfg;
    cfg.model = {.architecture = Architecture::logistic, .d_in = 2, .num_classes = 2};
    cfg.optimizer = {.kind = OptimizerKind::sgd, .lr = 0.2};
    cfg.batch_size = 2;
    cfg.iterations = 10;
    cfg.seed = 8;
    cfg.plan = CheckpointPlan::last_only;

    std::vector<double> values = {5.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    CoresetReport rep = coreset(make_scores(values, "training_loss"), 0.3, ds, cfg, test);
    CHECK(rep.retained == std::vector<std::size_t>{0, 1, 2});

    CHECK_THROWS_AS(coreset(make_scores(values, "training_loss"), 0.0, ds, cfg, test),
                    InputError);
}

TEST_CASE("deletion report on a planted noisy instance recovers accuracy") {
    // one wildly mislabeled region: edit with exact loo vectors must recover
    LabeledDataset base = make_synthetic(SyntheticKind::two_gaussians, 120, 0.9, 14);
    auto [noisy, mask] = inject_label_noise(base, 0.15, 7);
    LabeledDataset test = make_synthetic(SyntheticKind::two_gaussians, 200, 0.9, 15);

    TrainConfig cfg;
    cfg.model = {.architecture = Architecture::logistic, .d_in = 2, .num_classes = 2};
    cfg.optimizer = {.kind = OptimizerKind::sgd, .lr = 0.3};
    cfg.batch_size = 30;
    cfg.iterations = 150;
    cfg.seed = 21;
    cfg.plan = CheckpointPlan::last_only;
    TrainingTrace trace = train(noisy, cfg);

    // exact influence vectors as the editing payload: recovery should be high
    std::map<std::size_t, ParamVector> vecs;
    for (std::size_t idx : mask.flipped)
        vecs[idx] = loo_retrain(noisy, cfg, idx, trace, {}).influence_params;

    DeletionReport rep = run_deletion(trace, noisy, vecs, mask.flipped, test);
    CHECK(rep.accuracy_oracle >= rep.accuracy_noisy);
    CHECK(std::isfinite(rep.recovery_ratio));

    DeletionReport empty = run_deletion(trace, noisy, vecs, {}, test);
    CHECK(empty.accuracy_edited == empty.accuracy_noisy);
}
