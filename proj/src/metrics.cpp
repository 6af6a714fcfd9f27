#include "savad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "savad/binary_io.hpp"

namespace savad {

namespace {

void check_inputs(std::span<const double> scores, std::span<const std::uint8_t> labels, const char* what) {
    if (scores.size() != labels.size()) {
        throw std::invalid_argument(std::string(what) + ": " + std::to_string(scores.size()) + " scores vs " +
                                    std::to_string(labels.size()) + " labels");
    }
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_inputs(scores, labels, "roc_auc");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // sum of mid-ranks of positives
    double positive_rank_sum = 0.0;
    std::size_t positives = 0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[idx[k]]) {
                positive_rank_sum += mid_rank;
                ++positives;
            }
        }
        i = j;
    }
    const std::size_t negatives = scores.size() - positives;
    if (positives == 0 || negatives == 0) throw UndefinedMetricError("roc_auc: both classes must be present");
    const double p = static_cast<double>(positives);
    const double n = static_cast<double>(negatives);
    return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_inputs(scores, labels, "average_precision");
    const std::vector<std::size_t> order = descending_order(scores);
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (!labels[order[r]]) continue;
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    if (hits == 0) throw UndefinedMetricError("average_precision: no positive labels");
    return sum / static_cast<double>(hits);
}

std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_inputs(scores, labels, "roc_curve");
    const std::vector<std::size_t> order = descending_order(scores);
    const auto positives = static_cast<double>(std::count(labels.begin(), labels.end(), std::uint8_t(1)));
    const double negatives = static_cast<double>(labels.size()) - positives;
    if (positives == 0 || negatives == 0) throw UndefinedMetricError("roc_curve: both classes must be present");
    std::vector<CurvePoint> pts{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
    double tp = 0;
    double fp = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        (labels[order[r]] ? tp : fp) += 1;
        if (r + 1 == order.size() || scores[order[r + 1]] != scores[order[r]]) {
            pts.push_back({scores[order[r]], fp / negatives, tp / positives});
        }
    }
    return pts;
}

std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_inputs(scores, labels, "pr_curve");
    const std::vector<std::size_t> order = descending_order(scores);
    const auto positives = static_cast<double>(std::count(labels.begin(), labels.end(), std::uint8_t(1)));
    if (positives == 0) throw UndefinedMetricError("pr_curve: no positive labels");
    std::vector<CurvePoint> pts;
    double tp = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (labels[order[r]]) tp += 1;
        if (r + 1 == order.size() || scores[order[r + 1]] != scores[order[r]]) {
            pts.push_back({scores[order[r]], tp / positives, tp / static_cast<double>(r + 1)});
        }
    }
    return pts;
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["auc"] = auc;
    j["ap"] = ap;
    j["auc_sub"] = auc_sub ? nlohmann::ordered_json(*auc_sub) : nlohmann::ordered_json(nullptr);
    j["ap_sub"] = ap_sub ? nlohmann::ordered_json(*ap_sub) : nlohmann::ordered_json(nullptr);
    j["auc_original"] = auc_original;
    j["ap_original"] = ap_original;
    j["n_videos"] = n_videos;
    j["n_frames"] = n_frames;
    j["n_positive"] = n_positive;
    j["roc_points"] = roc_points.size();
    j["pr_points"] = pr_points.size();
    return j.dump(2);
}

EvalReport report_from_traces(const std::vector<VideoTrace>& traces, const std::vector<VideoTrace>& original) {
    std::vector<double> all_scores;
    std::vector<std::uint8_t> all_labels;
    std::vector<double> sub_scores;
    std::vector<std::uint8_t> sub_labels;
    for (const auto& t : traces) {
        if (t.scores.size() != t.frame_labels.size()) throw std::invalid_argument("trace " + t.name + ": length mismatch");
        all_scores.insert(all_scores.end(), t.scores.begin(), t.scores.end());
        all_labels.insert(all_labels.end(), t.frame_labels.begin(), t.frame_labels.end());
        if (t.label == 1) {
            sub_scores.insert(sub_scores.end(), t.scores.begin(), t.scores.end());
            sub_labels.insert(sub_labels.end(), t.frame_labels.begin(), t.frame_labels.end());
        }
    }
    EvalReport r;
    r.n_videos = traces.size();
    r.n_frames = all_scores.size();
    r.n_positive = static_cast<std::size_t>(std::count(all_labels.begin(), all_labels.end(), std::uint8_t(1)));
    r.auc = roc_auc(all_scores, all_labels);
    r.ap = average_precision(all_scores, all_labels);
    r.roc_points = roc_curve(all_scores, all_labels);
    r.pr_points = pr_curve(all_scores, all_labels);
    try {
        r.auc_sub = roc_auc(sub_scores, sub_labels);
    } catch (const UndefinedMetricError&) {
    }
    try {
        r.ap_sub = average_precision(sub_scores, sub_labels);
    } catch (const UndefinedMetricError&) {
    }
    if (!original.empty()) {
        std::vector<double> o_scores;
        for (const auto& t : original) o_scores.insert(o_scores.end(), t.scores.begin(), t.scores.end());
        r.auc_original = roc_auc(o_scores, all_labels);
        r.ap_original = average_precision(o_scores, all_labels);
    }
    return r;
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& points, const std::string& x_name,
                     const std::string& y_name) {
    std::string out = "index," + x_name + "," + y_name + ",threshold\n";
    for (std::size_t i = 0; i < points.size(); ++i) {
        out += std::to_string(i) + "," + format_double(points[i].x) + "," + format_double(points[i].y) + "," +
               format_double(points[i].threshold) + "\n";
    }
    write_file(path, out);
}

void write_trace_csv(const std::filesystem::path& path, const VideoTrace& trace) {
    std::string out = "index,value,label\n";
    for (std::size_t i = 0; i < trace.scores.size(); ++i) {
        out += std::to_string(i) + "," + format_double(trace.scores[i]) + "," +
               std::to_string(i < trace.frame_labels.size() ? int(trace.frame_labels[i]) : 0) + "\n";
    }
    write_file(path, out);
}

void write_eval_outputs(const std::filesystem::path& out_dir, const EvalReport& report,
                        const std::vector<VideoTrace>& traces) {
    write_file(out_dir / "report.json", report.to_json() + "\n");
    write_curve_csv(out_dir / "roc.csv", report.roc_points, "fpr", "tpr");
    write_curve_csv(out_dir / "pr.csv", report.pr_points, "recall", "precision");
    for (const auto& t : traces) write_trace_csv(out_dir / "traces" / (t.name + ".csv"), t);
}

}  // namespace savad
