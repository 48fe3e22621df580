#pragma once

// Run configuration (versioned JSON) and the four pipeline commands. The CLI
// binary is a thin wrapper over these; tests drive them directly.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "diffin/dataset.hpp"
#include "diffin/influence.hpp"
#include "diffin/tasks.hpp"
#include "diffin/trainer.hpp"

namespace diffin {

// exit codes shared by the commands and the CLI
inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitUnsupported = 3;
inline constexpr int kExitMissing = 4;
inline constexpr int kExitNumerical = 5;

struct DatasetBlock {
    enum class Source { synthetic, csv };
    Source source = Source::synthetic;
    SyntheticKind synthetic = SyntheticKind::two_gaussians;
    std::size_t n = 400;
    double noise_sd = 1.0;
    std::string csv_path;
    CsvSchema csv_schema;
    double noise_rate = 0.0;  // label flips on the train split
    std::uint64_t noise_seed = 0;
    SplitSpec split;
};

struct TaskBlock {
    std::vector<double> clean_rates = {0.1, 0.2, 0.3};
    double coreset_ratio = 0.3;
};

struct RunConfig {
    int schema = 1;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    DatasetBlock dataset;
    TrainConfig trainer;  // model + optimizer + trainer knobs
    std::vector<std::string> estimators = {"diffin"};
    DiffInConfig influence;
    IfSolverConfig if_solver;
    TaskBlock tasks;

    static RunConfig from_file(const std::string& path);
    static RunConfig from_json_text(const std::string& text);
    std::string to_json_text() const;
    std::uint64_t fingerprint() const;
};

struct PreparedData {
    LabeledDataset train;  // noise applied when configured
    LabeledDataset val;    // always clean
    LabeledDataset test;   // always clean
    NoiseMask mask;
};

/// Materialize the dataset block: source -> split -> train-split label noise.
PreparedData prepare_data(const RunConfig& cfg);

struct OracleMode {
    enum class Kind { loo_all, loo_sample, groups };
    Kind kind = Kind::loo_all;
    std::size_t k = 0;           // loo_sample
    std::size_t group_count = 0; // groups
    std::size_t group_size = 0;
    std::uint64_t seed = 0;
};

int cmd_train(const RunConfig& cfg, const std::string& out_dir);
int cmd_score(const RunConfig& cfg, const std::string& trace_dir, const std::string& estimator,
              const std::string& target, std::size_t workers, const std::string& out_dir);
int cmd_oracle(const RunConfig& cfg, const std::string& trace_dir, const OracleMode& mode,
               std::size_t workers, const std::string& out_dir);
int cmd_report(const RunConfig& cfg, const std::string& trace_dir, const std::string& task,
               std::size_t workers, const std::string& out_dir);

/// Map an escaped exception onto the exit-code contract, printing the message
/// to stderr.
int run_guarded(const std::function<int()>& body);

/// Reads DIFFIN_SEED; logs and applies the override when present.
void apply_seed_override(RunConfig& cfg);

std::string scores_csv_path(const std::string& out_dir, const std::string& estimator,
                            const std::string& target);
std::vector<InfluenceScore> read_scores_csv(const std::string& path);

}  // namespace diffin
