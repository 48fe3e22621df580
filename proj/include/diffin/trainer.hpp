#pragma once

// Deterministic mini-batch training with checkpoint capture.
//
// One iteration = one mini-batch update. The batch for step t is a pure
// function of (seed, dataset size, batch size): each epoch draws a fresh
// seeded permutation and consumes it in consecutive chunks (last chunk may
// be short). Replaying with identical inputs is bit-identical.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "diffin/common.hpp"
#include "diffin/dataset.hpp"
#include "diffin/model.hpp"
#include "diffin/optimizer.hpp"

namespace diffin {

enum class CheckpointPlan { uniform, all, last_only };

struct TrainConfig {
    ModelSpec model;
    OptimizerConfig optimizer;
    std::size_t batch_size = 32;
    std::size_t iterations = 100;  // T
    std::uint64_t seed = 0;
    CheckpointPlan plan = CheckpointPlan::uniform;
    std::size_t plan_m = 5;

    void validate(std::size_t n) const;
    std::uint64_t fingerprint() const;
};

struct Checkpoint {
    std::size_t t = 0;          // number of updates applied before this state
    ParamVector theta;          // theta^t
    OptimizerState opt;         // state entering the update at step t (M_{t-1}, V_{t-1})
    std::vector<std::size_t> batch_indices;  // B^t, the batch for the update t -> t+1
};

struct TrainingTrace {
    TrainConfig config;
    std::uint64_t dataset_hash = 0;
    std::size_t dataset_size = 0;
    std::vector<Checkpoint> checkpoints;  // strictly increasing t; always holds 0 and T
    ParamVector final_theta;
    std::vector<double> loss_curve;  // batch loss at theta^t, t = 0..T-1
    bool diverged = false;

    const Checkpoint& at_step(std::size_t t) const;
    bool has_step(std::size_t t) const;
    /// Stored steps > 0, ascending: the estimator's sampled time-steps.
    std::vector<std::size_t> influence_steps() const;
};

/// m distinct steps from {1..T}, ascending, always containing T.
std::vector<std::size_t> sample_timesteps(std::size_t T, std::size_t m, std::uint64_t seed);

/// Batch of sample indices used for update step t on a dataset of size n.
std::vector<std::size_t> batch_for_step(std::uint64_t seed, std::size_t n,
                                        std::size_t batch_size, std::size_t t);

using BatchSchedule = std::function<std::vector<std::size_t>(std::size_t step)>;

/// Schedule for a dataset derived from a parent of size parent_n by removing
/// `removed` (sorted): the parent's permutation with those slots deleted and
/// surviving indices renumbered, chunked by batch_size. Removing samples that
/// a batch never contained leaves that batch unchanged.
BatchSchedule reduced_schedule(std::uint64_t seed, std::size_t parent_n, std::size_t batch_size,
                               std::vector<std::size_t> removed);

TrainingTrace train(const LabeledDataset& ds, const TrainConfig& cfg);
TrainingTrace train_with_schedule(const LabeledDataset& ds, const TrainConfig& cfg,
                                  const BatchSchedule& schedule);

/// Continue the deterministic loop from stored checkpoint t on ds_variant
/// (batch schedule re-derived for the variant's size) until step T.
ParamVector replay_from(const TrainingTrace& trace, std::size_t t,
                        const LabeledDataset& ds_variant);

// Trace directory format: trace.json + ckpt_{t}.bin (+ ckpt_{t}.opt.bin for
// stateful optimizers) + batches.json + params.json sidecar.
void save_trace(const TrainingTrace& trace, const std::string& dir);
TrainingTrace load_trace(const std::string& dir, const LabeledDataset& expected_ds);

std::uint64_t trace_hash(const TrainingTrace& trace);

}  // namespace diffin
