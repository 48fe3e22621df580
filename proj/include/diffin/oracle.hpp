#pragma once

// Ground truth and evaluation: exact leave-one-out / group retraining with
// matched seeds, rank correlation metrics, the linear data-modeling score,
// and the polynomial error-bound diagnostic.

#include <cstdint>
#include <string>
#include <vector>

#include "diffin/common.hpp"
#include "diffin/dataset.hpp"
#include "diffin/trainer.hpp"

namespace diffin {

struct ExactInfluence {
    std::vector<std::size_t> removed;  // one index for LOO, several for groups
    ParamVector theta_minus;           // parameters retrained without `removed`
    ParamVector influence_params;      // theta_minus - theta_star
    std::vector<double> delta_loss;    // one entry per requested target set
};

/// Retrain without sample z_index under the identical seed policy and report
/// the exact parameter and loss changes against the baseline trace.
ExactInfluence loo_retrain(const LabeledDataset& ds, const TrainConfig& cfg, std::size_t z_index,
                           const TrainingTrace& baseline,
                           std::span<const LabeledDataset* const> target_sets);

ExactInfluence group_retrain(const LabeledDataset& ds, const TrainConfig& cfg,
                             std::span<const std::size_t> indices, const TrainingTrace& baseline,
                             std::span<const LabeledDataset* const> target_sets);

double pearson(std::span<const double> xs, std::span<const double> ys);
double spearman(std::span<const double> xs, std::span<const double> ys);

/// Average ranks (1-based), ties averaged.
std::vector<double> average_ranks(std::span<const double> xs);

/// Spearman correlation between per-group summed estimator scores and the
/// exact group-removal effects.
double lds_score(const std::vector<std::vector<std::size_t>>& groups,
                 std::span<const double> per_sample_scores,
                 std::span<const double> exact_group_effects);

struct BoundConstants {
    double lipschitz = 0.0;   // empirical gradient-Lipschitz estimate
    double grad_norm = 0.0;   // max per-sample gradient norm over checkpoints
    double excursion = 0.0;   // max |theta^t - theta^0| over supplied traces
    std::size_t iterations = 0;
    std::size_t n = 0;
};

/// Probe-based constants for the error bound. The Lipschitz estimate is a
/// lower bound measured on seeded parameter pairs near the trajectory.
BoundConstants estimate_constants(const TrainingTrace& trace, const LabeledDataset& ds,
                                  std::size_t probes, std::uint64_t seed,
                                  std::span<const TrainingTrace* const> subset_traces = {});

/// 2 T^2 l (T+1) C + (T^2 / N) g
double error_bound(const BoundConstants& c);

// JSON cache entries for oracle results (keyed by dataset + config hashes).
std::string exact_influence_to_json(const ExactInfluence& e, std::uint64_t dataset_hash,
                                    std::uint64_t config_hash);
ExactInfluence exact_influence_from_json(const std::string& text, std::uint64_t dataset_hash,
                                         std::uint64_t config_hash);

}  // namespace diffin
