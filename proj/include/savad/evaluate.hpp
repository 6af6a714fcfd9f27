#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "savad/data.hpp"
#include "savad/metrics.hpp"
#include "savad/trainer.hpp"

namespace savad {

struct EvalOptions {
    bool allow_missing_labels = false;
    double eps = 0.2;
    double beta = 0.0;
};

struct Evaluation {
    EvalReport report;
    std::vector<VideoTrace> traces;  // S_a frame scores
    std::vector<VideoTrace> original_traces;  // S_o frame scores
};

/// Frame-level evaluation over a labelled test set. Expanded snippet scores
/// are truncated to each video's labelled frame count.
template <typename Scalar>
Evaluation evaluate(const Model<Scalar>& model, const Manifest& test, const EvalOptions& options = {}) {
    const std::vector<Video> videos = load_videos(test, true, options.allow_missing_labels);
    if (videos.empty()) throw DataError("evaluation set is empty");
    Evaluation ev;
    for (const auto& v : videos) {
        const auto snip = infer_snippets(model, Matrix<Scalar>(v.features.template cast<Scalar>()), options.eps, options.beta);
        const std::vector<std::uint8_t>& labels = *v.frame_labels;
        const std::string name = std::filesystem::path(v.path).stem().string();
        auto trace = [&](const Matrix<Scalar>& s) {
            VideoTrace t{name, v.label, expand_to_frames(s), labels};
            if (t.scores.size() < labels.size()) {
                throw DataError(v.path + ": " + std::to_string(labels.size()) + " labelled frames but only " +
                                std::to_string(t.scores.size()) + " scored frames");
            }
            t.scores.resize(labels.size());
            return t;
        };
        ev.traces.push_back(trace(snip.attended));
        ev.original_traces.push_back(trace(snip.original));
    }
    ev.report = report_from_traces(ev.traces, ev.original_traces);
    return ev;
}

}  // namespace savad
