#include "savad/config.hpp"

#include <initializer_list>
#include <set>

#include "savad/binary_io.hpp"

namespace savad {

namespace {

class Section {
public:
    Section(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw ConfigError("config: section '" + name_ + "' must be an object");
    }

    template <typename T>
    Section& get(const char* key, T& out) {
        known_.insert(key);
        if (!j_.contains(key)) return *this;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config: " + name_ + "." + key + ": " + e.what());
        }
        return *this;
    }

    void reject_unknown() const {
        for (const auto& [k, _] : j_.items()) {
            if (!known_.count(k)) throw ConfigError("config: unknown key " + name_ + "." + k);
        }
    }

private:
    const nlohmann::json& j_;
    std::string name_;
    std::set<std::string> known_;
};

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

nlohmann::ordered_json to_json(const RunConfig& cfg) {
    const TrainConfig& t = cfg.train;
    const LossConfig& l = t.loss;
    const ModelConfig& m = t.model;
    const SynthConfig& s = cfg.synth;
    nlohmann::ordered_json j;
    j["train"] = {{"lr", t.lr},
                  {"weight_decay", t.weight_decay},
                  {"batch_size", t.batch_size},
                  {"iterations", t.iterations},
                  {"seed", t.seed},
                  {"segments", t.segments},
                  {"beta", t.beta},
                  {"checkpoint_every", t.checkpoint_every},
                  {"workers", t.workers}};
    j["loss"] = {{"eps", l.eps},
                 {"alpha", l.alpha},
                 {"gamma", l.gamma},
                 {"mu", l.mu},
                 {"sparsity_weight", l.sparsity_weight},
                 {"switch_iter", l.switch_iter},
                 {"topk_fraction", l.topk_fraction},
                 {"bce_clamp", l.bce_clamp}};
    j["model"] = {{"feature_dim", m.feature_dim},
                  {"kernel_size", m.kernel_size},
                  {"attention_hidden", m.attention_hidden},
                  {"leaky_slope", m.leaky_slope},
                  {"dropout", m.dropout},
                  {"nonlocal_output_projection", m.nonlocal_output_projection},
                  {"attention_final_leaky", m.attention_final_leaky},
                  {"detach_scores_in_attention", m.detach_scores_in_attention}};
    j["synth"] = {{"train_normal", s.train_normal},
                  {"train_abnormal", s.train_abnormal},
                  {"test_normal", s.test_normal},
                  {"test_abnormal", s.test_abnormal},
                  {"feature_dim", s.feature_dim},
                  {"min_snippets", s.min_snippets},
                  {"max_snippets", s.max_snippets},
                  {"min_segments", s.min_segments},
                  {"max_segments", s.max_segments},
                  {"min_segment_len", s.min_segment_len},
                  {"max_segment_len", s.max_segment_len},
                  {"mean_shift", s.mean_shift},
                  {"noise", s.noise},
                  {"ar_coeff", s.ar_coeff},
                  {"shift_fraction", s.shift_fraction},
                  {"seed", s.seed}};
    j["eval"] = {{"allow_missing_labels", cfg.eval.allow_missing_labels}};
    return j;
}

void apply_json(RunConfig& cfg, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    for (const auto& [k, _] : j.items()) {
        static const std::set<std::string> sections{"train", "loss", "model", "synth", "eval"};
        if (!sections.count(k)) throw ConfigError("config: unknown section " + k);
    }
    TrainConfig& t = cfg.train;
    if (j.contains("train")) {
        Section(j["train"], "train")
            .get("lr", t.lr)
            .get("weight_decay", t.weight_decay)
            .get("batch_size", t.batch_size)
            .get("iterations", t.iterations)
            .get("seed", t.seed)
            .get("segments", t.segments)
            .get("beta", t.beta)
            .get("checkpoint_every", t.checkpoint_every)
            .get("workers", t.workers)
            .reject_unknown();
    }
    if (j.contains("loss")) {
        LossConfig& l = t.loss;
        Section(j["loss"], "loss")
            .get("eps", l.eps)
            .get("alpha", l.alpha)
            .get("gamma", l.gamma)
            .get("mu", l.mu)
            .get("sparsity_weight", l.sparsity_weight)
            .get("switch_iter", l.switch_iter)
            .get("topk_fraction", l.topk_fraction)
            .get("bce_clamp", l.bce_clamp)
            .reject_unknown();
    }
    if (j.contains("model")) {
        ModelConfig& m = t.model;
        Section(j["model"], "model")
            .get("feature_dim", m.feature_dim)
            .get("kernel_size", m.kernel_size)
            .get("attention_hidden", m.attention_hidden)
            .get("leaky_slope", m.leaky_slope)
            .get("dropout", m.dropout)
            .get("nonlocal_output_projection", m.nonlocal_output_projection)
            .get("attention_final_leaky", m.attention_final_leaky)
            .get("detach_scores_in_attention", m.detach_scores_in_attention)
            .reject_unknown();
    }
    if (j.contains("synth")) {
        SynthConfig& s = cfg.synth;
        Section(j["synth"], "synth")
            .get("train_normal", s.train_normal)
            .get("train_abnormal", s.train_abnormal)
            .get("test_normal", s.test_normal)
            .get("test_abnormal", s.test_abnormal)
            .get("feature_dim", s.feature_dim)
            .get("min_snippets", s.min_snippets)
            .get("max_snippets", s.max_snippets)
            .get("min_segments", s.min_segments)
            .get("max_segments", s.max_segments)
            .get("min_segment_len", s.min_segment_len)
            .get("max_segment_len", s.max_segment_len)
            .get("mean_shift", s.mean_shift)
            .get("noise", s.noise)
            .get("ar_coeff", s.ar_coeff)
            .get("shift_fraction", s.shift_fraction)
            .get("seed", s.seed)
            .reject_unknown();
    }
    if (j.contains("eval")) {
        Section(j["eval"], "eval").get("allow_missing_labels", cfg.eval.allow_missing_labels).reject_unknown();
    }
    cfg.eval.eps = t.loss.eps;
    cfg.eval.beta = t.beta;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    RunConfig cfg = default_run_config();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    apply_json(cfg, j);
    return cfg;
}

}  // namespace savad
