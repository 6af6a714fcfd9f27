#include "savad/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "savad/binary_io.hpp"

namespace savad {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string() + ": cannot open for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(path.string() + ": write failed");
}

FeatureSequence read_feature_file(const std::filesystem::path& path) {
    const std::string data = read_file(path);
    ByteReader r(data, path.string());
    if (data.size() < 4 || r.bytes(4) != "VADF") throw MagicError(path.string() + ": bad magic, expected VADF");
    const std::uint32_t version = r.u32();
    if (version != kFeatureFileVersion) {
        throw DataError(path.string() + ": unsupported feature file version " + std::to_string(version));
    }
    const std::uint32_t steps = r.u32();
    const std::uint32_t dim = r.u32();
    const std::uint64_t count = std::uint64_t(steps) * dim;
    if (r.remaining() < count * 4) {
        throw TruncatedError(path.string() + ": header declares " + std::to_string(steps) + "x" + std::to_string(dim) +
                             " values but payload holds " + std::to_string(r.remaining() / 4));
    }
    if (r.remaining() != count * 4) {
        throw DataError(path.string() + ": " + std::to_string(r.remaining() - count * 4) + " trailing bytes after payload");
    }
    FeatureSequence x(steps, dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const float v = r.f32();
        if (!std::isfinite(v)) {
            throw NonFiniteError(path.string() + ": non-finite value at row " + std::to_string(i / std::max<Eigen::Index>(dim, 1)));
        }
        x.data()[i] = v;
    }
    return x;
}

void write_feature_file(const std::filesystem::path& path, const FeatureSequence& features) {
    if (!features.allFinite()) throw NonFiniteError(path.string() + ": refusing to write non-finite features");
    ByteWriter w;
    w.bytes("VADF");
    w.u32(kFeatureFileVersion);
    w.u32(static_cast<std::uint32_t>(features.rows()));
    w.u32(static_cast<std::uint32_t>(features.cols()));
    for (Eigen::Index i = 0; i < features.size(); ++i) w.f32(features.data()[i]);
    write_file(path, w.buffer());
}

std::vector<std::uint8_t> read_frame_labels(const std::filesystem::path& path) {
    const std::string data = read_file(path);
    std::vector<std::uint8_t> labels(data.begin(), data.end());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] > 1) throw DataError(path.string() + ": frame label at " + std::to_string(i) + " is not 0/1");
    }
    return labels;
}

void write_frame_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
    write_file(path, std::string_view(reinterpret_cast<const char*>(labels.data()), labels.size()));
}

Manifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
    Manifest m;
    m.base_dir = base_dir;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("path") || !j["path"].is_string() || !j.contains("label") ||
            !j["label"].is_number_integer()) {
            throw DataError("manifest line " + std::to_string(lineno) + ": expected {path, label}");
        }
        ManifestEntry e;
        e.path = j["path"].get<std::string>();
        e.label = j["label"].get<int>();
        if (e.label != 0 && e.label != 1) throw DataError("manifest line " + std::to_string(lineno) + ": label must be 0 or 1");
        if (j.contains("frame_labels_path") && !j["frame_labels_path"].is_null()) {
            e.frame_labels_path = j["frame_labels_path"].get<std::string>();
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

std::string serialize_manifest(const Manifest& manifest) {
    std::string out;
    for (const auto& e : manifest.entries) {
        nlohmann::ordered_json j;
        j["path"] = e.path;
        j["label"] = e.label;
        if (e.frame_labels_path) j["frame_labels_path"] = *e.frame_labels_path;
        out += j.dump();
        out += '\n';
    }
    return out;
}

Manifest read_manifest(const std::filesystem::path& path) {
    return parse_manifest(read_file(path), path.parent_path());
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    write_file(path, serialize_manifest(manifest));
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> segment_ranges(Eigen::Index source_len, Eigen::Index target_len) {
    if (source_len < 1 || target_len < 1) throw ParameterError("segment_ranges: lengths must be >= 1");
    std::vector<std::pair<Eigen::Index, Eigen::Index>> ranges;
    ranges.reserve(static_cast<std::size_t>(target_len));
    for (Eigen::Index i = 0; i < target_len; ++i) {
        Eigen::Index lo = i * source_len / target_len;
        Eigen::Index hi = (i + 1) * source_len / target_len;
        if (hi <= lo) {
            lo = std::max<Eigen::Index>(lo - 1, 0);
            hi = lo + 1;
        }
        ranges.emplace_back(lo, hi);
    }
    return ranges;
}

std::vector<Video> load_videos(const Manifest& manifest, bool require_frame_labels, bool allow_missing) {
    std::vector<Video> videos;
    videos.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        Video v;
        v.path = manifest.resolve(e.path).string();
        v.label = e.label;
        if (e.frame_labels_path) {
            v.frame_labels = read_frame_labels(manifest.resolve(*e.frame_labels_path));
        } else if (require_frame_labels) {
            if (allow_missing) continue;
            throw DataError(v.path + ": no frame labels in manifest");
        }
        v.features = read_feature_file(v.path);
        if (v.features.rows() < 1) throw DataError(v.path + ": video has no snippets");
        videos.push_back(std::move(v));
    }
    return videos;
}

void SynthConfig::validate(bool allow_zero_shift) const {
    if (train_normal < 1 || train_abnormal < 1 || test_normal < 1 || test_abnormal < 1) {
        throw ConfigError("synth: every video count must be >= 1");
    }
    if (feature_dim < 4 || feature_dim % 4 != 0) throw ConfigError("synth: feature_dim must be a positive multiple of 4");
    if (min_snippets < 1 || max_snippets < min_snippets) throw ConfigError("synth: invalid snippet-count range");
    if (min_segments < 1 || max_segments < min_segments) throw ConfigError("synth: invalid segment-count range");
    if (min_segment_len < 1 || max_segment_len < min_segment_len) throw ConfigError("synth: invalid segment-length range");
    if (min_segment_len > min_snippets) throw ConfigError("synth: min_segment_len exceeds min_snippets");
    if (allow_zero_shift ? !(mean_shift >= 0.0) : !(mean_shift > 0.0)) throw ConfigError("synth: mean_shift must be > 0");
    if (!(noise > 0.0)) throw ConfigError("synth: noise must be > 0");
    if (!(ar_coeff >= 0.0 && ar_coeff < 1.0)) throw ConfigError("synth: ar_coeff must be in [0, 1)");
    if (!(shift_fraction > 0.0 && shift_fraction <= 1.0)) throw ConfigError("synth: shift_fraction must be in (0, 1]");
}

namespace {

struct SynthVideo {
    FeatureSequence features;
    std::vector<std::uint8_t> frame_labels;
};

SynthVideo make_video(const SynthConfig& cfg, const std::vector<float>& mean, bool abnormal, std::uint64_t split,
                      std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(index)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int dim = cfg.feature_dim;
    const int steps = std::uniform_int_distribution<int>(cfg.min_snippets, cfg.max_snippets)(rng);

    const double rho = cfg.ar_coeff;
    const double innovation = std::sqrt(1.0 - rho * rho) * cfg.noise;
    Matrix<double> x(steps, dim);
    for (int c = 0; c < dim; ++c) x(0, c) = cfg.noise * gauss(rng);
    for (int t = 1; t < steps; ++t) {
        for (int c = 0; c < dim; ++c) x(t, c) = rho * x(t - 1, c) + innovation * gauss(rng);
    }
    for (int t = 0; t < steps; ++t) {
        for (int c = 0; c < dim; ++c) x(t, c) += mean[static_cast<std::size_t>(c)];
    }

    std::vector<std::uint8_t> snippet_label(static_cast<std::size_t>(steps), 0);
    if (abnormal) {
        std::vector<int> channels(static_cast<std::size_t>(dim));
        std::iota(channels.begin(), channels.end(), 0);
        std::shuffle(channels.begin(), channels.end(), rng);
        const auto shifted = static_cast<std::size_t>(std::max(1L, std::lround(cfg.shift_fraction * dim)));
        channels.resize(shifted);
        const int segments = std::uniform_int_distribution<int>(cfg.min_segments, cfg.max_segments)(rng);
        for (int s = 0; s < segments; ++s) {
            const int len = std::uniform_int_distribution<int>(cfg.min_segment_len, std::min(cfg.max_segment_len, steps))(rng);
            const int start = std::uniform_int_distribution<int>(0, steps - len)(rng);
            for (int t = start; t < start + len; ++t) {
                snippet_label[static_cast<std::size_t>(t)] = 1;
            }
        }
        for (int t = 0; t < steps; ++t) {
            if (!snippet_label[static_cast<std::size_t>(t)]) continue;
            for (int c : channels) x(t, c) += cfg.mean_shift;
        }
    }

    // the last snippet may cover a partial block of frames
    const int missing = std::uniform_int_distribution<int>(0, kFramesPerSnippet - 1)(rng);
    const int frames = steps * kFramesPerSnippet - missing;
    SynthVideo v;
    v.features = x.cast<float>();
    v.frame_labels.resize(static_cast<std::size_t>(frames));
    for (int f = 0; f < frames; ++f) {
        v.frame_labels[static_cast<std::size_t>(f)] = snippet_label[static_cast<std::size_t>(f / kFramesPerSnippet)];
    }
    return v;
}

std::string numbered(const std::string& stem, int i) {
    std::string digits = std::to_string(i);
    if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
    return stem + "_" + digits;
}

}  // namespace

SynthResult generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir) {
    config.validate(true);
    std::filesystem::create_directories(out_dir / "features");
    std::filesystem::create_directories(out_dir / "labels");

    SynthResult result;
    {
        std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32), 0xFFFFu};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (int c = 0; c < config.feature_dim; ++c) result.normal_mean.push_back(static_cast<float>(gauss(rng)));
    }

    auto emit = [&](Manifest& manifest, const std::string& split_name, std::uint64_t split, int normals, int abnormals,
                    bool with_labels) {
        manifest.base_dir = out_dir;
        for (int i = 0; i < normals + abnormals; ++i) {
            const bool abnormal = i >= normals;
            const std::string stem = numbered(split_name + (abnormal ? "_abnormal" : "_normal"), abnormal ? i - normals : i);
            const SynthVideo v = make_video(config, result.normal_mean, abnormal, split, static_cast<std::uint64_t>(i));
            ManifestEntry e;
            e.path = "features/" + stem + ".vadf";
            e.label = abnormal ? 1 : 0;
            write_feature_file(out_dir / e.path, v.features);
            if (with_labels) {
                e.frame_labels_path = "labels/" + stem + ".u8";
                write_frame_labels(out_dir / *e.frame_labels_path, v.frame_labels);
            }
            manifest.entries.push_back(std::move(e));
        }
    };
    emit(result.train, "train", 0, config.train_normal, config.train_abnormal, false);
    emit(result.test, "test", 1, config.test_normal, config.test_abnormal, true);
    write_manifest(out_dir / "train.jsonl", result.train);
    write_manifest(out_dir / "test.jsonl", result.test);
    return result;
}

}  // namespace savad
