// Command-line entry point: synth | train | eval | infer | gradcheck.
//
// Exit codes: 0 success, 1 usage/configuration error, 2 data error,
// 3 verification failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "savad/binary_io.hpp"
#include "savad/checkpoint.hpp"
#include "savad/config.hpp"
#include "savad/evaluate.hpp"
#include "savad/gradcheck_suite.hpp"

namespace fs = std::filesystem;
using namespace savad;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kVerification = 3 };

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "out";
    std::optional<int> segments;
    std::optional<double> eps, alpha, gamma, mu, beta, topk_fraction, lr;
    std::optional<long> switch_iter, iterations;
    std::optional<int> workers, batch_size;
    std::string checkpoint;
    std::string manifest;
    std::string features;
    bool allow_missing_labels = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "random seed (data synthesis, initialisation, batching, dropout)");
    cmd->add_option("--out-dir", o.out_dir, "output directory");
    cmd->add_option("--segments", o.segments, "training segments per video (T)");
    cmd->add_option("--eps", o.eps, "suppressed rate");
    cmd->add_option("--alpha", o.alpha, "weight of the unsuppressed branches");
    cmd->add_option("--gamma", o.gamma, "attention norm weight");
    cmd->add_option("--mu", o.mu, "smoothness weight");
    cmd->add_option("--switch-iter", o.switch_iter, "iteration M at which the positive guide target is binarised");
    cmd->add_option("--beta", o.beta, "suppression scale (0 removes suppressed snippets)");
    cmd->add_option("--topk-fraction", o.topk_fraction, "fraction of snippets pooled into the video score");
    cmd->add_option("--workers", o.workers, "threads for per-video work");
    cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint (.savd)");
}

RunConfig resolve(const Overrides& o) {
    RunConfig cfg = o.config.empty() ? default_run_config() : load_run_config(o.config);
    TrainConfig& t = cfg.train;
    if (o.seed) {
        t.seed = *o.seed;
        cfg.synth.seed = *o.seed;
    }
    if (o.segments) t.segments = *o.segments;
    if (o.eps) t.loss.eps = *o.eps;
    if (o.alpha) t.loss.alpha = *o.alpha;
    if (o.gamma) t.loss.gamma = *o.gamma;
    if (o.mu) t.loss.mu = *o.mu;
    if (o.switch_iter) t.loss.switch_iter = *o.switch_iter;
    if (o.beta) t.beta = *o.beta;
    if (o.topk_fraction) t.loss.topk_fraction = *o.topk_fraction;
    if (o.workers) t.workers = *o.workers;
    if (o.lr) t.lr = *o.lr;
    if (o.iterations) t.iterations = *o.iterations;
    if (o.batch_size) t.batch_size = *o.batch_size;
    if (o.allow_missing_labels) cfg.eval.allow_missing_labels = true;
    cfg.eval.eps = t.loss.eps;
    cfg.eval.beta = t.beta;
    return cfg;
}

void print_config(const std::string& command, const RunConfig& cfg, const Overrides& o) {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["out_dir"] = o.out_dir;
    if (!o.checkpoint.empty()) j["checkpoint"] = o.checkpoint;
    if (!o.manifest.empty()) j["manifest"] = o.manifest;
    if (!o.features.empty()) j["features"] = o.features;
    j["config"] = to_json(cfg);
    std::cout << j.dump(2) << std::endl;
}

Model<float> load_model(const std::string& path, ModelConfig mc) {
    if (path.empty()) throw UsageError("--checkpoint is required");
    const std::vector<NamedArray> arrays = read_checkpoint(path);
    for (const auto& a : arrays) {
        if (a.name == "embed.nonlocal.query.weight" && a.extents.size() == 3) mc.feature_dim = a.extents[1];
    }
    Model<float> model(mc);
    load_checkpoint(path, model.params());
    return model;
}

int run_synth(const RunConfig& cfg, const Overrides& o) {
    cfg.synth.validate();
    const SynthResult r = generate_synthetic(cfg.synth, o.out_dir);
    std::cout << "wrote " << r.train.entries.size() << " training and " << r.test.entries.size() << " test videos to "
              << o.out_dir << "\n";
    return kOk;
}

int run_train(const RunConfig& cfg, const Overrides& o) {
    if (o.manifest.empty()) throw UsageError("train: --manifest is required");
    train_to_dir(read_manifest(o.manifest), cfg.train, o.out_dir);
    std::cout << "training finished: " << (fs::path(o.out_dir) / "model.savd").string() << "\n";
    return kOk;
}

int run_eval(const RunConfig& cfg, const Overrides& o) {
    if (o.manifest.empty()) throw UsageError("eval: --manifest is required");
    const Model<float> model = load_model(o.checkpoint, cfg.train.model);
    const Evaluation ev = evaluate(model, read_manifest(o.manifest), cfg.eval);
    write_eval_outputs(o.out_dir, ev.report, ev.traces);
    std::cout << ev.report.to_json() << "\n";
    return kOk;
}

int run_infer(const RunConfig& cfg, const Overrides& o) {
    if (o.features.empty()) throw UsageError("infer: --features is required");
    const Model<float> model = load_model(o.checkpoint, cfg.train.model);
    const std::vector<double> scores = infer(model, read_feature_file(o.features));
    const fs::path out = fs::path(o.out_dir) / "frame_scores.csv";
    std::string csv = "index,value\n";
    char buf[32];
    for (std::size_t i = 0; i < scores.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.10g", scores[i]);
        csv += std::to_string(i) + "," + buf + "\n";
    }
    fs::create_directories(o.out_dir);
    write_file(out, csv);
    std::cout << "wrote " << scores.size() << " frame scores to " << out.string() << "\n";
    return kOk;
}

int run_gradcheck(const RunConfig& cfg) {
    SuiteOptions opts;
    opts.seed = cfg.train.seed;
    const std::vector<SuiteEntry> entries = run_gradcheck_suite(opts);
    bool ok = true;
    std::printf("%-28s %-10s %14s %14s %10s %8s  %s\n", "check", "group", "rel err", "raw rel err", "tol", "skipped",
                "result");
    for (const auto& e : entries) {
        std::size_t skipped = 0;
        for (const auto& in : e.report.inputs) skipped += in.coords_skipped;
        std::printf("%-28s %-10s %14.3e %14.3e %10.1e %8zu  %s\n", e.name.c_str(), e.group.c_str(),
                    e.report.max_rel_error, e.report.raw_rel_error, e.report.tolerance, skipped,
                    e.report.passed ? "PASS" : "FAIL");
        ok = ok && e.report.passed;
    }
    std::printf("%s\n", ok ? "all gradient checks passed" : "gradient check FAILED");
    return ok ? kOk : kVerification;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Snippet anomalous-attention video anomaly detector"};
    app.require_subcommand(1);
    Overrides o;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic planted-anomaly dataset");
    CLI::App* train = app.add_subcommand("train", "train a model from a manifest");
    CLI::App* eval = app.add_subcommand("eval", "frame-level AUC/AP on a labelled manifest");
    CLI::App* inf = app.add_subcommand("infer", "frame scores for one feature file");
    CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference verification of every layer and the loss");
    for (CLI::App* cmd : {synth, train, eval, inf, grad}) add_common(cmd, o);
    train->add_option("--manifest", o.manifest, "training manifest (JSON lines)")->check(CLI::ExistingFile);
    train->add_option("--iterations", o.iterations, "number of optimisation steps");
    train->add_option("--batch-size", o.batch_size, "videos per batch (even)");
    train->add_option("--lr", o.lr, "Adam learning rate");
    eval->add_option("--manifest", o.manifest, "test manifest with frame labels")->check(CLI::ExistingFile);
    eval->add_flag("--allow-missing-labels", o.allow_missing_labels, "skip videos without frame labels");
    inf->add_option("--features", o.features, "feature file (.vadf)")->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kUsage;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        const RunConfig cfg = resolve(o);
        print_config(name, cfg, o);
        if (name == "synth") return run_synth(cfg, o);
        if (name == "train") return run_train(cfg, o);
        if (name == "eval") return run_eval(cfg, o);
        if (name == "infer") return run_infer(cfg, o);
        return run_gradcheck(cfg);
    } catch (const VerificationError& e) {
        std::cerr << "verification error: " << e.what() << "\n";
        return kVerification;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
}
