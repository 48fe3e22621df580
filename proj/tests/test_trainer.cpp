#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "diffin/trainer.hpp"

using namespace diffin;

namespace {

TrainConfig convex_cfg(std::uint64_t seed = 6) {
    TrainConfig cfg;
    cfg.model = {.architecture = Architecture::logistic, .d_in = 2, .num_classes = 2};
    cfg.optimizer = {.kind = OptimizerKind::sgd, .lr = 0.1};
    cfg.batch_size = 16;
    cfg.iterations = 200;
    cfg.seed = seed;
    cfg.plan = CheckpointPlan::uniform;
    cfg.plan_m = 5;
    return cfg;
}

}  // namespace

TEST_CASE("sample_timesteps covers the stated cases") {
    auto all = sample_timesteps(6, 6, 1);
    CHECK(all == std::vector<std::size_t>{1, 2, 3, 4, 5, 6});

    auto last = sample_timesteps(50, 1, 1);
    CHECK(last == std::vector<std::size_t>{50});

    auto a = sample_timesteps(50, 5, 3);
    auto b = sample_timesteps(50, 5, 3);
    CHECK(a == b);
    CHECK(a.size() == 5);
    CHECK(a.back() == 50);
    CHECK(std::is_sorted(a.begin(), a.end()));
    for (std::size_t t : a) CHECK(t >= 1);

    CHECK_THROWS_AS(sample_timesteps(10, 11, 1), InputError);
    CHECK_THROWS_AS(sample_timesteps(10, 0, 1), InputError);
}

TEST_CASE("batch schedule is a pure function and partitions each epoch") {
    const std::size_t n = 37, bs = 8;
    const std::size_t per_epoch = (n + bs - 1) / bs;
    std::set<std::size_t> seen;
    for (std::size_t slot = 0; slot < per_epoch; ++slot) {
        auto batch = batch_for_step(5, n, bs, slot);
        CHECK(batch == batch_for_step(5, n, bs, slot));
        for (std::size_t idx : batch) {
            CHECK(idx < n);
            CHECK(seen.insert(idx).second);  // no index reappears within the epoch
        }
    }
    CHECK(seen.size() == n);
}

TEST_CASE("training is deterministic and loss trends down on a convex problem") {
    LabeledDataset ds = make_synthetic(SyntheticKind::two_gaussians, 100, 1.0, 4);
    TrainConfig cfg = convex_cfg();
    TrainingTrace a = train(ds, cfg);
    TrainingTrace b = train(ds, cfg);
    CHECK(trace_hash(a) == trace_hash(b));
    CHECK(a.final_theta == b.final_theta);
    CHECK_FALSE(a.diverged);

    // averaged loss over the last quarter clearly below the first quarter
    const std::size_t q = a.loss_curve.size() / 4;
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < q; ++i) {
        head += a.loss_curve[i];
        tail += a.loss_curve[a.loss_curve.size() - 1 - i];
    }
    CHECK(tail < head);

    // T=1 performs exactly one update
    TrainConfig one = cfg;
    one.iterations = 1;
    one.plan = CheckpointPlan::all;
    TrainingTrace t1 = train(ds, one);
    CHECK(t1.checkpoints.size() == 2);
    CHECK(t1.final_theta != t1.checkpoints.front().theta);

    TrainConfig zero = cfg;
    zero.iterations = 0;
    CHECK_THROWS_AS(train(ds, zero), InputError);
}

TEST_CASE("checkpoints store the forward batch and replay one step exactly") {
    LabeledDataset ds = make_synthetic(SyntheticKind::two_gaussians, 60, 1.0, 8);
    TrainConfig cfg = convex_cfg(9);
    cfg.iterations = 25;
    cfg.plan = CheckpointPlan::all;
    cfg.optimizer.kind = OptimizerKind::sgd_momentum;
    cfg.optimizer.beta = 0.7;
    TrainingTrace trace = train(ds, cfg);
    REQUIRE(trace.checkpoints.size() == 26);

    for (std::size_t t : {std::size_t{0}, std::size_t{7}, std::size_t{24}}) {
        const Checkpoint& c = trace.at_step(t);
        ParamVector g = grad_batch(cfg.model, c.theta, ds, c.batch_indices);
        StepResult next = step(cfg.optimizer, c.opt, c.theta, g);
        const Checkpoint& want = trace.at_step(t + 1);
        for (std::size_t i = 0; i < next.theta.size(); ++i)
            REQUIRE(next.theta[i] == want.theta[i]);
    }
}

TEST_CASE("replay: identity, tail, and removed-sample cross-check") {
    LabeledDataset ds = make_synthetic(SyntheticKind::two_gaussians, 50, 1.0, 12);
    TrainConfig cfg = convex_cfg(13);
    cfg.iterations = 40;
    cfg.plan = CheckpointPlan::all;
    TrainingTrace trace = train(ds, cfg);

    // same dataset: replay reproduces the final parameters exactly
    CHECK(replay_from(trace, 0, ds) == trace.final_theta);
    CHECK(replay_from(trace, 17, ds) == trace.final_theta);
    // from the last step nothing happens
    CHECK(replay_from(trace, 40, ds) == trace.at_step(40).theta);

    // removing one sample and replaying from scratch equals a fresh training
    // on the reduced dataset with the same seed policy
    LabeledDataset reduced = ds.without(11);
    ParamVector replayed = replay_from(trace, 0, reduced);
    TrainingTrace fresh = train(reduced, cfg);
    CHECK(replayed == fresh.final_theta);

    TrainConfig sparse = cfg;
    sparse.plan = CheckpointPlan::last_only;
    TrainingTrace sparse_trace = train(ds, sparse);
    CHECK_THROWS_AS(replay_from(sparse_trace, 17, ds), MissingArtifactError);
}

TEST_CASE("reduced schedule deletes removed slots and keeps batches otherwise") {
    const std::size_t n = 24, bs = 6;
    auto base = batch_for_step(3, n, bs, 0);
    // remove one sample that is NOT in the first batch
    std::size_t victim = 0;
    std::set<std::size_t> first(base.begin(), base.end());
    while (first.count(victim)) ++victim;

    BatchSchedule sched = reduced_schedule(3, n, bs, {victim});
    auto reduced = sched(0);
    REQUIRE(reduced.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        std::size_t expect = base[i] > victim ? base[i] - 1 : base[i];
        CHECK(reduced[i] == expect);
    }
}

TEST_CASE("divergence aborts and keeps the last finite state") {
    LabeledDataset ds({1e155, 1e155, -1e155, -1e155}, {0, 1}, 2, 2, "huge");
    TrainConfig cfg;
    cfg.model = {.architecture = Architecture::quadratic, .d_in = 2, .num_classes = 2,
                 .loss_kind = LossKind::mse};
    cfg.optimizer = {.kind = OptimizerKind::sgd, .lr = 1.0};
    cfg.batch_size = 2;
    cfg.iterations = 400;
    cfg.seed = 1;
    cfg.plan = CheckpointPlan::last_only;
    TrainingTrace trace = train(ds, cfg);
    CHECK(trace.diverged);
    CHECK(vec::all_finite(trace.final_theta));
}

TEST_CASE("trace persistence round trip and fingerprint guard") {
    LabeledDataset ds = make_synthetic(SyntheticKind::two_gaussians, 40, 1.0, 3);
    TrainConfig cfg = convex_cfg(21);
    cfg.iterations = 30;
    cfg.optimizer.kind = OptimizerKind::adam;
    cfg.optimizer.lr = 0.05;
    TrainingTrace trace = train(ds, cfg);

    std::string dir = (std::filesystem::temp_directory_path() / "diffin_trace_rt").string();
    std::filesystem::remove_all(dir);
    save_trace(trace, dir);
    TrainingTrace back = load_trace(dir, ds);
    CHECK(back.final_theta == trace.final_theta);
    REQUIRE(back.checkpoints.size() == trace.checkpoints.size());
    for (std::size_t i = 0; i < back.checkpoints.size(); ++i) {
        CHECK(back.checkpoints[i].t == trace.checkpoints[i].t);
        CHECK(back.checkpoints[i].theta == trace.checkpoints[i].theta);
        CHECK(back.checkpoints[i].opt.m == trace.checkpoints[i].opt.m);
        CHECK(back.checkpoints[i].opt.v == trace.checkpoints[i].opt.v);
        CHECK(back.checkpoints[i].batch_indices == trace.checkpoints[i].batch_indices);
    }
    CHECK(trace_hash(back) == trace_hash(trace));

    LabeledDataset other = make_synthetic(SyntheticKind::two_gaussians, 40, 1.0, 4);
    CHECK_THROWS_AS(load_trace(dir, other), InputError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("influence steps exclude the initial state and keep the final step") {
    LabeledDataset ds = make_synthetic(SyntheticKind::two_gaussians, 30, 1.0, 3);
    TrainConfig cfg = convex_cfg(2);
    cfg.iterations = 50;
    cfg.plan_m = 4;
    TrainingTrace trace = train(ds, cfg);
    auto steps = trace.influence_steps();
    CHECK(steps.size() == 4);
    CHECK(steps.back() == 50);
    CHECK(trace.has_step(0));
}
