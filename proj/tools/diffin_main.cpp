// Command-line entry point: diffin train|score|oracle|report

#include <string>
#include <thread>

#include <CLI11.hpp>

#include "diffin/run.hpp"

using namespace diffin;

int main(int argc, char** argv) {
    CLI::App app{"influence analysis toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string trace_dir;
    std::string out_dir;
    std::string estimator = "diffin";
    std::string target = "validation_loss";
    std::size_t workers = std::max(1u, std::thread::hardware_concurrency());

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run-config JSON")->required();
        sub->add_option("--trace", trace_dir, "trace directory");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--workers", workers, "worker pool size");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train and persist a trace");
    add_common(train_cmd);

    CLI::App* score_cmd = app.add_subcommand("score", "score training samples");
    add_common(score_cmd);
    score_cmd->add_option("--estimator", estimator, "diffin|diffin_f|tracin|if");
    score_cmd->add_option("--target", target,
                          "validation_loss|self_loss|training_loss|parameters");

    CLI::App* oracle_cmd = app.add_subcommand("oracle", "exact retraining oracle");
    add_common(oracle_cmd);
    std::string mode = "loo_all";
    std::size_t k = 0, group_count = 0, group_size = 5;
    std::uint64_t mode_seed = 0;
    oracle_cmd->add_option("--mode", mode, "loo_all|loo_sample|groups");
    oracle_cmd->add_option("--k", k, "loo_sample: how many samples");
    oracle_cmd->add_option("--groups", group_count, "groups: how many groups");
    oracle_cmd->add_option("--group-size", group_size, "groups: samples per group");
    oracle_cmd->add_option("--mode-seed", mode_seed, "selection seed");

    CLI::App* report_cmd = app.add_subcommand("report", "assemble task reports");
    add_common(report_cmd);
    std::string task = "correlation";
    report_cmd->add_option("--task", task, "clean|correlation|deletion|coreset");

    CLI11_PARSE(app, argc, argv);

    return run_guarded([&]() -> int {
        RunConfig cfg = RunConfig::from_file(config_path);
        apply_seed_override(cfg);
        const std::string out = out_dir.empty() ? cfg.out_dir : out_dir;
        const std::string trace = trace_dir.empty() ? out + "/trace" : trace_dir;

        if (train_cmd->parsed()) return cmd_train(cfg, out);
        if (score_cmd->parsed()) return cmd_score(cfg, trace, estimator, target, workers, out);
        if (oracle_cmd->parsed()) {
            OracleMode m;
            if (mode == "loo_all") {
                m.kind = OracleMode::Kind::loo_all;
            } else if (mode == "loo_sample") {
                m.kind = OracleMode::Kind::loo_sample;
                m.k = k;
            } else if (mode == "groups") {
                m.kind = OracleMode::Kind::groups;
                m.group_count = group_count;
                m.group_size = group_size;
            } else {
                throw InputError("unknown oracle mode: " + mode);
            }
            m.seed = mode_seed;
            return cmd_oracle(cfg, trace, m, workers, out);
        }
        return cmd_report(cfg, trace, task, workers, out);
    });
}
