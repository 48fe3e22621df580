#pragma once

// The three evaluation pipelines: data cleaning (rank suspects, measure
// precision), data deletion (parameter editing by summed influence), and
// coreset selection (keep top scores, retrain, evaluate).

#include <map>
#include <string>
#include <vector>

#include "diffin/common.hpp"
#include "diffin/dataset.hpp"
#include "diffin/influence.hpp"
#include "diffin/oracle.hpp"
#include "diffin/trainer.hpp"

namespace diffin {

struct CleaningReport {
    std::string estimator;
    std::string target;
    std::vector<double> rates;
    // percent scale (0..100)
    std::vector<double> precision_selected;   // |selected & flipped| / |selected|
    std::vector<double> precision_all_noise;  // |selected & flipped| / |flipped|
    // convention matching the reference tables, where random selection at
    // rate r scores ~ 100 r under fixed noise
    std::string table_convention = "precision_all_noise";
};

/// Rank suspects and measure how many injected flips each selection budget
/// catches. Self-influence ranks descending; validation/training influence
/// ranks ascending (most negative = most harmful first). Ties break by
/// ascending sample index.
CleaningReport clean(const std::vector<InfluenceScore>& scores, const NoiseMask& mask,
                     const std::vector<double>& rates);

struct DeletionReport {
    double accuracy_noisy = 0.0;
    double accuracy_edited = 0.0;
    double accuracy_oracle = 0.0;
    double recovery_ratio = 0.0;  // (edited - noisy) / (oracle - noisy)
};

/// theta_star + sum of the influence vectors of Z (pure arithmetic).
ParamVector delete_edit(const ParamVector& theta_star,
                        const std::map<std::size_t, ParamVector>& influence_params,
                        const std::vector<std::size_t>& z);

/// Edit away Z and compare against the exact group retrain on a clean
/// evaluation set.
DeletionReport run_deletion(const TrainingTrace& trace, const LabeledDataset& train_set,
                            const std::map<std::size_t, ParamVector>& influence_params,
                            const std::vector<std::size_t>& z, const LabeledDataset& eval_set);

struct CoresetReport {
    double ratio = 0.0;
    std::vector<std::size_t> retained;  // ascending sample indices
    double retrained_accuracy = 0.0;
    std::uint64_t retrain_seed = 0;
};

/// Keep the round(ratio*N) samples with the highest influence on training
/// loss, retrain from scratch (data order reseeded by the coreset hash), and
/// evaluate on eval_set.
CoresetReport coreset(const std::vector<InfluenceScore>& scores_train_loss, double ratio,
                      const LabeledDataset& ds, const TrainConfig& cfg,
                      const LabeledDataset& eval_set);

/// Seed used for the coreset retrain: mixes the config seed with the
/// retained-index fingerprint.
std::uint64_t coreset_retrain_seed(std::uint64_t base_seed,
                                   const std::vector<std::size_t>& retained);

}  // namespace diffin
