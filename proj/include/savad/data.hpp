#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "savad/tape.hpp"

namespace savad {

/// T x D snippet features as stored on disk.
using FeatureSequence = Matrix<float>;

inline constexpr std::uint32_t kFeatureFileVersion = 1;
inline constexpr int kFramesPerSnippet = 16;

// Feature file: "VADF" | u32 version=1 | u32 T | u32 D | f32[T*D] row-major, little-endian.
FeatureSequence read_feature_file(const std::filesystem::path& path);
void write_feature_file(const std::filesystem::path& path, const FeatureSequence& features);

/// Frame labels: one byte (0 or 1) per frame.
std::vector<std::uint8_t> read_frame_labels(const std::filesystem::path& path);
void write_frame_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

struct ManifestEntry {
    std::string path;
    int label = 0;
    std::optional<std::string> frame_labels_path;

    bool operator==(const ManifestEntry&) const = default;
};

/// JSON-lines list of videos. Relative paths resolve against `base_dir`.
struct Manifest {
    std::vector<ManifestEntry> entries;
    std::filesystem::path base_dir;

    [[nodiscard]] std::filesystem::path resolve(const std::string& p) const {
        const std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    }
};

Manifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir = {});
std::string serialize_manifest(const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Half-open index ranges used to pool T0 snippets into T segments. Range i
/// is [floor(i*T0/T), floor((i+1)*T0/T)); an empty range is replaced by the
/// single index just before its start (index 0 at the very beginning).
std::vector<std::pair<Eigen::Index, Eigen::Index>> segment_ranges(Eigen::Index source_len, Eigen::Index target_len);

/// Mean-pools rows of `x` into `target_len` contiguous segments.
template <typename Scalar>
Matrix<Scalar> resample_segments(const Matrix<Scalar>& x, Eigen::Index target_len) {
    if (x.rows() < 1) throw ShapeError("resample_segments: empty sequence");
    if (target_len < 1) throw ParameterError("resample_segments: target length must be >= 1");
    if (x.rows() == target_len) return x;
    Matrix<Scalar> out(target_len, x.cols());
    const auto ranges = segment_ranges(x.rows(), target_len);
    for (Eigen::Index i = 0; i < target_len; ++i) {
        const auto [lo, hi] = ranges[static_cast<std::size_t>(i)];
        out.row(i) = x.middleRows(lo, hi - lo).colwise().sum() / Scalar(hi - lo);
    }
    return out;
}

/// A manifest entry with its features (and frame labels when available) loaded.
struct Video {
    std::string path;
    int label = 0;
    FeatureSequence features;
    std::optional<std::vector<std::uint8_t>> frame_labels;
};

/// Loads every entry. With `require_frame_labels`, a missing label file is a
/// DataError unless `allow_missing` is set, in which case the video is skipped.
std::vector<Video> load_videos(const Manifest& manifest, bool require_frame_labels = false, bool allow_missing = false);

struct SynthConfig {
    int train_normal = 100;
    int train_abnormal = 100;
    int test_normal = 25;
    int test_abnormal = 25;
    int feature_dim = 32;
    int min_snippets = 48;
    int max_snippets = 160;
    int min_segments = 1;
    int max_segments = 3;
    int min_segment_len = 4;
    int max_segment_len = 16;
    double mean_shift = 2.5;
    double noise = 1.0;
    double ar_coeff = 0.5;
    // fraction of channels receiving the shift inside an anomaly segment
    double shift_fraction = 0.5;
    std::uint64_t seed = 0;

    void validate(bool allow_zero_shift = false) const;
};

struct SynthResult {
    Manifest train;
    Manifest test;
    std::vector<float> normal_mean;  // per-channel mean of the normal process
};

/// Writes features/, labels/, train.jsonl and test.jsonl under `out_dir`.
SynthResult generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace savad
