#include "diffin/run.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "diffin/model.hpp"
#include "diffin/oracle.hpp"

namespace fs = std::filesystem;

namespace diffin {

namespace {

void log_json(const nlohmann::json& j) { std::cout << j.dump() << "\n"; }

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

ModelSpec model_from_block(const nlohmann::json& j) { return spec_from_json(j.dump()); }

OptimizerConfig optimizer_from_block(const nlohmann::json& j) {
    OptimizerConfig o;
    std::string kind = j.value("kind", "sgd");
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
    o.validate();
    return o;
}

nlohmann::json optimizer_to_block(const OptimizerConfig& o) {
    nlohmann::json j;
    j["kind"] = o.kind == OptimizerKind::sgd ? "sgd"
                : o.kind == OptimizerKind::sgd_momentum ? "sgd_momentum"
                                                        : "adam";
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

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    RunConfig cfg;
    cfg.schema = j.value("schema", 1);
    if (cfg.schema != 1) throw InputError("unsupported config schema " + std::to_string(cfg.schema));
    cfg.seed = j.value("seed", std::uint64_t{0});
    cfg.out_dir = j.value("out_dir", std::string("out"));

    const nlohmann::json& d = j.at("dataset");
    const nlohmann::json& src = d.at("source");
    std::string kind = src.value("kind", "synthetic");
    if (kind == "synthetic") {
        cfg.dataset.source = DatasetBlock::Source::synthetic;
        std::string which = src.value("synthetic", "two_gaussians");
        if (which == "two_gaussians")
            cfg.dataset.synthetic = SyntheticKind::two_gaussians;
        else if (which == "two_moons")
            cfg.dataset.synthetic = SyntheticKind::two_moons;
        else
            throw InputError("unknown synthetic dataset: " + which);
        cfg.dataset.n = src.value("n", std::size_t{400});
        cfg.dataset.noise_sd = src.value("noise_sd", 1.0);
    } else if (kind == "csv") {
        cfg.dataset.source = DatasetBlock::Source::csv;
        cfg.dataset.csv_path = src.at("path").get<std::string>();
        cfg.dataset.csv_schema.d_in = src.at("d_in").get<std::size_t>();
        cfg.dataset.csv_schema.num_classes = src.at("num_classes").get<int>();
    } else {
        throw InputError("unknown dataset source: " + kind);
    }
    if (d.contains("noise")) {
        cfg.dataset.noise_rate = d.at("noise").value("rate", 0.0);
        cfg.dataset.noise_seed = d.at("noise").value("seed", std::uint64_t{0});
    }
    if (d.contains("split")) {
        const nlohmann::json& s = d.at("split");
        cfg.dataset.split.train_fraction = s.value("train", 1.0);
        cfg.dataset.split.val_fraction = s.value("val", 0.0);
        cfg.dataset.split.test_fraction = s.value("test", 0.0);
        cfg.dataset.split.seed = s.value("seed", std::uint64_t{0});
    }

    cfg.trainer.model = model_from_block(j.at("model"));
    cfg.trainer.optimizer = optimizer_from_block(j.at("optimizer"));
    const nlohmann::json& t = j.at("trainer");
    cfg.trainer.batch_size = t.value("batch_size", std::size_t{32});
    cfg.trainer.iterations = t.value("iterations", std::size_t{100});
    std::string plan = t.value("plan", "uniform");
    if (plan == "uniform")
        cfg.trainer.plan = CheckpointPlan::uniform;
    else if (plan == "all")
        cfg.trainer.plan = CheckpointPlan::all;
    else if (plan == "last_only")
        cfg.trainer.plan = CheckpointPlan::last_only;
    else
        throw InputError("unknown checkpoint plan: " + plan);
    cfg.trainer.plan_m = t.value("plan_m", std::size_t{5});
    cfg.trainer.seed = cfg.seed;

    if (j.contains("influence")) {
        const nlohmann::json& inf = j.at("influence");
        cfg.estimators = inf.value("estimators", std::vector<std::string>{"diffin"});
        for (const std::string& e : cfg.estimators)
            if (e != "diffin" && e != "diffin_f" && e != "tracin" && e != "if")
                throw InputError("unknown estimator id: " + e);
        std::string mode = inf.value("mode", "collapsed_k_eq_t");
        if (mode == "collapsed_k_eq_t")
            cfg.influence.mode = DiffInMode::collapsed_k_eq_t;
        else if (mode == "full_history")
            cfg.influence.mode = DiffInMode::full_history;
        else if (mode == "momentum_generalized")
            cfg.influence.mode = DiffInMode::momentum_generalized;
        else
            throw InputError("unknown influence mode: " + mode);
        if (inf.contains("proxy")) {
            const nlohmann::json& p = inf.at("proxy");
            std::string pk = p.value("kind", "recorded");
            if (pk == "recorded")
                cfg.influence.proxy.kind = BatchProxy::Kind::recorded;
            else if (pk == "random")
                cfg.influence.proxy.kind = BatchProxy::Kind::random;
            else
                throw InputError("unknown batch proxy: " + pk);
            cfg.influence.proxy.batch_size = p.value("batch_size", std::size_t{64});
            cfg.influence.proxy.seed = p.value("seed", std::uint64_t{0});
        }
        if (inf.contains("hvp")) {
            const nlohmann::json& h = inf.at("hvp");
            std::string scheme = h.value("scheme", "central");
            if (scheme == "central")
                cfg.influence.hvp.scheme = HvpConfig::Scheme::central;
            else if (scheme == "forward")
                cfg.influence.hvp.scheme = HvpConfig::Scheme::forward;
            else
                throw InputError("unknown hvp scheme: " + scheme);
            cfg.influence.hvp.delta = h.value("delta", 1e-3);
            cfg.influence.hvp.floor = h.value("floor", 1e-8);
        }
        if (inf.contains("if_solver")) {
            const nlohmann::json& s = inf.at("if_solver");
            std::string sk = s.value("kind", "cg");
            if (sk == "cg")
                cfg.if_solver.kind = IfSolverConfig::Kind::cg;
            else if (sk == "lissa")
                cfg.if_solver.kind = IfSolverConfig::Kind::lissa;
            else
                throw InputError("unknown if solver: " + sk);
            cfg.if_solver.iters = s.value("iters", std::size_t{100});
            cfg.if_solver.tol = s.value("tol", 1e-4);
            cfg.if_solver.damping = s.value("damping", -1.0);
            cfg.if_solver.lissa_depth = s.value("lissa_depth", std::size_t{200});
            cfg.if_solver.lissa_scale = s.value("lissa_scale", 10.0);
            cfg.if_solver.seed = s.value("seed", std::uint64_t{99});
        }
    }
    if (j.contains("tasks")) {
        const nlohmann::json& tk = j.at("tasks");
        if (tk.contains("clean"))
            cfg.tasks.clean_rates = tk.at("clean").value("rates", std::vector<double>{0.1, 0.2, 0.3});
        if (tk.contains("coreset"))
            cfg.tasks.coreset_ratio = tk.at("coreset").value("ratio", 0.3);
    }
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("missing config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string RunConfig::to_json_text() const {
    nlohmann::json j;
    j["schema"] = schema;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    nlohmann::json src;
    if (dataset.source == DatasetBlock::Source::synthetic) {
        src["kind"] = "synthetic";
        src["synthetic"] =
            dataset.synthetic == SyntheticKind::two_gaussians ? "two_gaussians" : "two_moons";
        src["n"] = dataset.n;
        src["noise_sd"] = dataset.noise_sd;
    } else {
        src["kind"] = "csv";
        src["path"] = dataset.csv_path;
        src["d_in"] = dataset.csv_schema.d_in;
        src["num_classes"] = dataset.csv_schema.num_classes;
    }
    j["dataset"]["source"] = src;
    j["dataset"]["noise"] = {{"rate", dataset.noise_rate}, {"seed", dataset.noise_seed}};
    j["dataset"]["split"] = {{"train", dataset.split.train_fraction},
                             {"val", dataset.split.val_fraction},
                             {"test", dataset.split.test_fraction},
                             {"seed", dataset.split.seed}};
    j["model"] = nlohmann::json::parse(spec_to_json(trainer.model));
    j["optimizer"] = optimizer_to_block(trainer.optimizer);
    j["trainer"] = {{"batch_size", trainer.batch_size},
                    {"iterations", trainer.iterations},
                    {"plan", trainer.plan == CheckpointPlan::uniform  ? "uniform"
                             : trainer.plan == CheckpointPlan::all    ? "all"
                                                                      : "last_only"},
                    {"plan_m", trainer.plan_m}};
    j["influence"] = {
        {"estimators", estimators},
        {"mode", influence.mode == DiffInMode::collapsed_k_eq_t    ? "collapsed_k_eq_t"
                 : influence.mode == DiffInMode::full_history      ? "full_history"
                                                                   : "momentum_generalized"},
        {"proxy",
         {{"kind", influence.proxy.kind == BatchProxy::Kind::recorded ? "recorded" : "random"},
          {"batch_size", influence.proxy.batch_size},
          {"seed", influence.proxy.seed}}},
        {"hvp",
         {{"scheme", influence.hvp.scheme == HvpConfig::Scheme::central ? "central" : "forward"},
          {"delta", influence.hvp.delta},
          {"floor", influence.hvp.floor}}},
        {"if_solver",
         {{"kind", if_solver.kind == IfSolverConfig::Kind::cg ? "cg" : "lissa"},
          {"iters", if_solver.iters},
          {"tol", if_solver.tol},
          {"damping", if_solver.damping},
          {"lissa_depth", if_solver.lissa_depth},
          {"lissa_scale", if_solver.lissa_scale},
          {"seed", if_solver.seed}}}};
    j["tasks"] = {{"clean", {{"rates", tasks.clean_rates}}},
                  {"coreset", {{"ratio", tasks.coreset_ratio}}}};
    return j.dump(2);
}

std::uint64_t RunConfig::fingerprint() const {
    std::string s = to_json_text();
    return fnv1a(s.data(), s.size());
}

PreparedData prepare_data(const RunConfig& cfg) {
    LabeledDataset full =
        cfg.dataset.source == DatasetBlock::Source::synthetic
            ? make_synthetic(cfg.dataset.synthetic, cfg.dataset.n, cfg.dataset.noise_sd,
                             mix_seed(cfg.seed, 0xda7a))
            : load_csv(cfg.dataset.csv_path, cfg.dataset.csv_schema);
    SplitResult parts = split(full, cfg.dataset.split);

    PreparedData out;
    out.val = std::move(parts.val);
    out.test = std::move(parts.test);
    if (cfg.dataset.noise_rate > 0.0) {
        auto [noisy, mask] = inject_label_noise(parts.train, cfg.dataset.noise_rate,
                                                cfg.dataset.noise_seed);
        out.train = std::move(noisy);
        out.mask = std::move(mask);
    } else {
        out.train = std::move(parts.train);
        out.mask.rate = 0.0;
    }
    if (out.train.dim() != cfg.trainer.model.d_in)
        throw InputError("model d_in does not match dataset");
    if (cfg.trainer.model.architecture != Architecture::quadratic &&
        out.train.num_classes() != cfg.trainer.model.num_classes)
        throw InputError("model num_classes does not match dataset");
    return out;
}

void apply_seed_override(RunConfig& cfg) {
    const char* env = std::getenv("DIFFIN_SEED");
    if (env == nullptr || *env == '\0') return;
    char* end = nullptr;
    unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') throw InputError("DIFFIN_SEED must be an integer");
    cfg.seed = v;
    cfg.trainer.seed = v;
    log_json({{"event", "seed_override"}, {"seed", v}});
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_train(const RunConfig& cfg, const std::string& out_dir) {
    PreparedData data = prepare_data(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    TrainingTrace trace = train(data.train, cfg.trainer);

    const std::size_t every = std::max<std::size_t>(1, cfg.trainer.iterations / 20);
    for (std::size_t t = 0; t < trace.loss_curve.size(); t += every)
        log_json({{"event", "train_step"}, {"step", t}, {"loss", trace.loss_curve[t]}});
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    fs::create_directories(out_dir);
    save_trace(trace, out_dir + "/trace");
    if (cfg.dataset.noise_rate > 0.0)
        std::ofstream(out_dir + "/noise_mask.json") << noise_mask_to_json(data.mask) << "\n";
    {
        nlohmann::json meta;
        meta["config_hash"] = hash_hex(cfg.fingerprint());
        meta["dataset_hash"] = hash_hex(data.train.fingerprint());
        std::ofstream(out_dir + "/run_meta.json") << meta.dump(2) << "\n";
    }
    log_json({{"event", "train_done"},
              {"step", trace.loss_curve.size()},
              {"loss", trace.loss_curve.empty() ? 0.0 : trace.loss_curve.back()},
              {"seconds", secs},
              {"trace_hash", hash_hex(trace_hash(trace))},
              {"diverged", trace.diverged}});
    if (trace.diverged) {
        std::cerr << "training diverged; last finite checkpoint retained\n";
        return kExitNumerical;
    }
    return kExitOk;
}

std::string scores_csv_path(const std::string& out_dir, const std::string& estimator,
                            const std::string& target) {
    return out_dir + "/scores_" + estimator + "_" + target + ".csv";
}

std::vector<InfluenceScore> read_scores_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("missing scores file: " + path);
    std::vector<InfluenceScore> out;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        InfluenceScore s;
        std::getline(ss, cell, ',');
        s.sample_index = std::stoull(cell);
        std::getline(ss, s.estimator, ',');
        std::getline(ss, s.target, ',');
        std::getline(ss, cell, ',');
        s.value = std::strtod(cell.c_str(), nullptr);
        out.push_back(std::move(s));
    }
    return out;
}

int cmd_score(const RunConfig& cfg, const std::string& trace_dir, const std::string& estimator,
              const std::string& target, std::size_t workers, const std::string& out_dir) {
    PreparedData data = prepare_data(cfg);
    TrainingTrace trace = load_trace(trace_dir, data.train);
    Target tgt = target_from_name(target);

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<InfluenceScore> scores =
        score_all(trace, data.train, data.val, estimator, tgt, cfg.influence, cfg.if_solver,
                  workers);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    fs::create_directories(out_dir);
    const std::string path = scores_csv_path(out_dir, estimator, target);
    std::ofstream csv(path);
    csv << "sample_index,estimator,target,score\n";
    for (const InfluenceScore& s : scores) {
        double v = tgt == Target::parameters ? vec::norm(s.params) : s.value;
        csv << s.sample_index << "," << s.estimator << "," << s.target << "," << fmt_double(v)
            << "\n";
    }
    csv.close();
    if (tgt == Target::parameters) {
        const std::string dir = out_dir + "/influence_" + estimator;
        fs::create_directories(dir);
        for (const InfluenceScore& s : scores)
            save_params(dir + "/sample_" + std::to_string(s.sample_index) + ".bin", s.params);
    }
    nlohmann::json meta;
    meta["config_hash"] = hash_hex(cfg.fingerprint());
    meta["dataset_hash"] = hash_hex(data.train.fingerprint());
    meta["trace_hash"] = hash_hex(trace_hash(trace));
    std::ofstream(path + ".meta.json") << meta.dump(2) << "\n";
    log_json({{"event", "score_done"},
              {"estimator", estimator},
              {"target", target},
              {"samples", scores.size()},
              {"seconds", secs}});
    return kExitOk;
}

int cmd_oracle(const RunConfig& cfg, const std::string& trace_dir, const OracleMode& mode,
               std::size_t workers, const std::string& out_dir) {
    PreparedData data = prepare_data(cfg);
    TrainingTrace trace = load_trace(trace_dir, data.train);
    const std::uint64_t ds_hash = data.train.fingerprint();
    const std::uint64_t cfg_hash = cfg.trainer.fingerprint();
    const std::string dir = out_dir + "/oracle";
    fs::create_directories(dir);

    const LabeledDataset* targets[] = {&data.val, &data.train};

    auto cached = [&](const std::string& path) {
        if (!fs::exists(path)) return false;
        std::ifstream in(path);
        std::stringstream ss;
        ss << in.rdbuf();
        try {
            exact_influence_from_json(ss.str(), ds_hash, cfg_hash);
            return true;
        } catch (const std::exception&) {
            return false;
        }
    };

    if (mode.kind == OracleMode::Kind::groups) {
        if (mode.group_count < 2) throw InputError("need at least two groups");
        if (mode.group_size == 0 || mode.group_size >= data.train.size())
            throw InputError("bad group size");
        Rng rng(mix_seed(mode.seed, 0x96f5));
        std::vector<std::vector<std::size_t>> groups;
        for (std::size_t g = 0; g < mode.group_count; ++g)
            groups.push_back(
                rng.sample_without_replacement(0, data.train.size(), mode.group_size));
        std::atomic<std::size_t> fresh{0};
        parallel_for(groups.size(), workers, [&](std::size_t g) {
            const std::string path = dir + "/group_" + std::to_string(g) + ".json";
            if (cached(path)) return;
            ExactInfluence e = group_retrain(data.train, cfg.trainer, groups[g], trace, targets);
            std::ofstream(path) << exact_influence_to_json(e, ds_hash, cfg_hash) << "\n";
            fresh.fetch_add(1);
        });
        log_json({{"event", "oracle_done"},
                  {"mode", "groups"},
                  {"entries", groups.size()},
                  {"retrained", fresh.load()}});
        return kExitOk;
    }

    std::vector<std::size_t> indices;
    if (mode.kind == OracleMode::Kind::loo_all) {
        for (std::size_t i = 0; i < data.train.size(); ++i) indices.push_back(i);
    } else {
        if (mode.k == 0) throw InputError("loo_sample needs k >= 1");
        if (mode.k > data.train.size()) throw InputError("loo_sample k exceeds dataset size");
        Rng rng(mix_seed(mode.seed, 0x581e));
        indices = rng.sample_without_replacement(0, data.train.size(), mode.k);
    }
    std::atomic<std::size_t> fresh{0};
    parallel_for(indices.size(), workers, [&](std::size_t j) {
        const std::size_t i = indices[j];
        const std::string path = dir + "/loo_" + std::to_string(i) + ".json";
        if (cached(path)) return;
        ExactInfluence e = loo_retrain(data.train, cfg.trainer, i, trace, targets);
        std::ofstream(path) << exact_influence_to_json(e, ds_hash, cfg_hash) << "\n";
        fresh.fetch_add(1);
    });
    log_json({{"event", "oracle_done"},
              {"mode", mode.kind == OracleMode::Kind::loo_all ? "loo_all" : "loo_sample"},
              {"entries", indices.size()},
              {"retrained", fresh.load()}});
    return kExitOk;
}

namespace {

ExactInfluence load_oracle_entry(const std::string& path, std::uint64_t ds_hash,
                                 std::uint64_t cfg_hash) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("missing oracle entry: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return exact_influence_from_json(ss.str(), ds_hash, cfg_hash);
}

void write_report(const std::string& out_dir, const std::string& task, const nlohmann::json& j,
                  const std::string& csv_text) {
    fs::create_directories(out_dir);
    std::ofstream(out_dir + "/report_" + task + ".json") << j.dump(2) << "\n";
    std::ofstream(out_dir + "/report_" + task + ".csv") << csv_text;
}

}  // namespace

int cmd_report(const RunConfig& cfg, const std::string& trace_dir, const std::string& task,
               std::size_t workers, const std::string& out_dir) {
    PreparedData data = prepare_data(cfg);
    TrainingTrace trace = load_trace(trace_dir, data.train);
    const std::uint64_t ds_hash = data.train.fingerprint();
    const std::uint64_t cfg_hash = cfg.trainer.fingerprint();

    if (task == "clean") {
        if (cfg.dataset.noise_rate <= 0.0)
            throw MissingArtifactError("clean task needs an injected noise mask");
        std::ifstream mf(out_dir + "/noise_mask.json");
        if (!mf) throw MissingArtifactError("missing noise_mask.json; run train first");
        std::stringstream ss;
        ss << mf.rdbuf();
        NoiseMask mask = noise_mask_from_json(ss.str());

        nlohmann::json j;
        std::string csv = "estimator,target,rate,precision_selected,precision_all_noise\n";
        bool any = false;
        for (const std::string& est : cfg.estimators) {
            for (const char* tgt : {"self_loss", "validation_loss"}) {
                const std::string path = scores_csv_path(out_dir, est, tgt);
                if (!fs::exists(path)) continue;
                CleaningReport rep = clean(read_scores_csv(path), mask, cfg.tasks.clean_rates);
                any = true;
                nlohmann::json row;
                row["estimator"] = est;
                row["target"] = tgt;
                row["rates"] = rep.rates;
                row["precision_selected"] = rep.precision_selected;
                row["precision_all_noise"] = rep.precision_all_noise;
                row["table_convention"] = rep.table_convention;
                j["reports"].push_back(row);
                for (std::size_t i = 0; i < rep.rates.size(); ++i) {
                    csv += est;
                    csv += ",";
                    csv += tgt;
                    csv += "," + fmt_double(rep.rates[i]) + "," +
                           fmt_double(rep.precision_selected[i]) + "," +
                           fmt_double(rep.precision_all_noise[i]) + "\n";
                }
            }
        }
        if (!any) throw MissingArtifactError("no score files found; run score first");
        write_report(out_dir, task, j, csv);
        return kExitOk;
    }

    if (task == "correlation") {
        std::vector<std::size_t> loo_indices;
        std::vector<double> exact_val;
        for (std::size_t i = 0; i < data.train.size(); ++i) {
            const std::string path = out_dir + "/oracle/loo_" + std::to_string(i) + ".json";
            if (!fs::exists(path)) continue;
            ExactInfluence e = load_oracle_entry(path, ds_hash, cfg_hash);
            loo_indices.push_back(i);
            exact_val.push_back(e.delta_loss.at(0));
        }
        if (loo_indices.size() < 2)
            throw MissingArtifactError("correlation task needs at least two LOO oracle entries");

        nlohmann::json j;
        std::string csv = "estimator,pearson,spearman,lds,samples\n";
        for (const std::string& est : cfg.estimators) {
            const std::string path = scores_csv_path(out_dir, est, "validation_loss");
            if (!fs::exists(path)) continue;
            std::vector<InfluenceScore> scores = read_scores_csv(path);
            std::vector<double> est_vals;
            for (std::size_t i : loo_indices) est_vals.push_back(scores.at(i).value);
            nlohmann::json row;
            row["estimator"] = est;
            row["pearson"] = pearson(est_vals, exact_val);
            row["spearman"] = spearman(est_vals, exact_val);
            row["samples"] = loo_indices.size();

            // LDS over whatever group entries exist
            std::vector<std::vector<std::size_t>> groups;
            std::vector<double> group_effects;
            for (std::size_t g = 0;; ++g) {
                const std::string gp = out_dir + "/oracle/group_" + std::to_string(g) + ".json";
                if (!fs::exists(gp)) break;
                ExactInfluence e = load_oracle_entry(gp, ds_hash, cfg_hash);
                groups.push_back(e.removed);
                group_effects.push_back(e.delta_loss.at(0));
            }
            double lds = std::numeric_limits<double>::quiet_NaN();
            if (groups.size() >= 2) {
                std::vector<double> per_sample(scores.size());
                for (const InfluenceScore& s : scores) per_sample[s.sample_index] = s.value;
                lds = lds_score(groups, per_sample, group_effects);
                row["lds"] = lds;
                row["groups"] = groups.size();
            }
            j["reports"].push_back(row);
            csv += est + "," + fmt_double(row["pearson"].get<double>()) + "," +
                   fmt_double(row["spearman"].get<double>()) + "," +
                   (groups.size() >= 2 ? fmt_double(lds) : std::string("nan")) + "," +
                   std::to_string(loo_indices.size()) + "\n";
        }
        if (!j.contains("reports"))
            throw MissingArtifactError("no validation_loss score files found");
        write_report(out_dir, task, j, csv);
        return kExitOk;
    }

    if (task == "deletion") {
        if (cfg.dataset.noise_rate <= 0.0)
            throw MissingArtifactError("deletion task needs an injected noise mask");
        std::ifstream mf(out_dir + "/noise_mask.json");
        if (!mf) throw MissingArtifactError("missing noise_mask.json; run train first");
        std::stringstream ss;
        ss << mf.rdbuf();
        NoiseMask mask = noise_mask_from_json(ss.str());

        const std::string dir = out_dir + "/influence_diffin";
        std::map<std::size_t, ParamVector> vectors;
        for (std::size_t idx : mask.flipped) {
            const std::string path = dir + "/sample_" + std::to_string(idx) + ".bin";
            if (!fs::exists(path))
                throw MissingArtifactError("missing influence vector " + path +
                                           "; run score with target=parameters");
            vectors[idx] = load_params(path);
        }
        DeletionReport rep = run_deletion(trace, data.train, vectors, mask.flipped, data.test);
        nlohmann::json j;
        j["accuracy_noisy"] = rep.accuracy_noisy;
        j["accuracy_edited"] = rep.accuracy_edited;
        j["accuracy_oracle"] = rep.accuracy_oracle;
        j["recovery_ratio"] = rep.recovery_ratio;
        j["deleted"] = mask.flipped.size();
        std::string csv = "accuracy_noisy,accuracy_edited,accuracy_oracle,recovery_ratio\n" +
                          fmt_double(rep.accuracy_noisy) + "," + fmt_double(rep.accuracy_edited) +
                          "," + fmt_double(rep.accuracy_oracle) + "," +
                          fmt_double(rep.recovery_ratio) + "\n";
        write_report(out_dir, task, j, csv);
        return kExitOk;
    }

    if (task == "coreset") {
        const std::string path = scores_csv_path(out_dir, "diffin", "training_loss");
        if (!fs::exists(path))
            throw MissingArtifactError("coreset task needs diffin training_loss scores");
        std::vector<InfluenceScore> scores = read_scores_csv(path);
        CoresetReport rep =
            coreset(scores, cfg.tasks.coreset_ratio, data.train, cfg.trainer, data.test);
        nlohmann::json j;
        j["ratio"] = rep.ratio;
        j["retained"] = rep.retained.size();
        j["retrained_accuracy"] = rep.retrained_accuracy;
        j["retrain_seed"] = rep.retrain_seed;
        std::string csv = "ratio,retained,retrained_accuracy\n" + fmt_double(rep.ratio) + "," +
                          std::to_string(rep.retained.size()) + "," +
                          fmt_double(rep.retrained_accuracy) + "\n";
        write_report(out_dir, task, j, csv);
        return kExitOk;
    }

    throw InputError("unknown task: " + task);
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const UnsupportedError& e) {
        std::cerr << "unsupported: " << e.what() << "\n";
        return kExitUnsupported;
    } catch (const MissingArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return kExitMissing;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
}

}  // namespace diffin
