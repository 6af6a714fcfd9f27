#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace savad {

/// Area under the ROC curve as the Mann-Whitney statistic:
/// P(s+ > s-) + 0.5 P(s+ == s-). Throws UndefinedMetricError unless both classes occur.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Step-wise average precision: mean over positives of the precision at each
/// positive's rank, ranking by descending score with ties kept in input order.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct CurvePoint {
    double threshold = 0.0;
    double x = 0.0;  // FPR for ROC, recall for PR
    double y = 0.0;  // TPR for ROC, precision for PR
};

/// One point per distinct score, swept from high to low threshold, starting at (0, 0).
std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels);
/// One point per distinct score, swept from high to low threshold.
std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct EvalReport {
    double auc = 0.0;
    double ap = 0.0;
    std::optional<double> auc_sub;  // abnormal videos only; empty when undefined
    std::optional<double> ap_sub;
    double auc_original = 0.0;  // same protocol scored with S_o instead of S_a
    double ap_original = 0.0;
    std::vector<CurvePoint> roc_points;
    std::vector<CurvePoint> pr_points;
    std::size_t n_videos = 0;
    std::size_t n_frames = 0;
    std::size_t n_positive = 0;

    [[nodiscard]] std::string to_json() const;
};

/// Frame scores and labels of one video, used for the per-video CSV traces.
struct VideoTrace {
    std::string name;
    int label = 0;
    std::vector<double> scores;
    std::vector<std::uint8_t> frame_labels;
};

/// Builds a report from per-video traces (already truncated to label length).
/// `original` holds the S_o-based frame scores in the same layout.
EvalReport report_from_traces(const std::vector<VideoTrace>& traces, const std::vector<VideoTrace>& original);

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& points, const std::string& x_name,
                     const std::string& y_name);
void write_trace_csv(const std::filesystem::path& path, const VideoTrace& trace);
/// report.json, roc.csv, pr.csv and traces/<name>.csv under `out_dir`.
void write_eval_outputs(const std::filesystem::path& out_dir, const EvalReport& report,
                        const std::vector<VideoTrace>& traces);

}  // namespace savad
