#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "savad/layers.hpp"

namespace savad {

/// Classifier widths after the input layer.
inline constexpr std::array<Eigen::Index, 3> kClassifierWidths{512, 128, 1};

struct ModelConfig {
    Eigen::Index feature_dim = 1024;
    Eigen::Index kernel_size = 3;
    Eigen::Index attention_hidden = 512;
    double leaky_slope = 0.2;
    double dropout = 0.7;
    bool nonlocal_output_projection = false;
    // LeakyReLU after the final 1-channel attention conv as well.
    bool attention_final_leaky = false;
    // Form S_a from a detached copy of S_o.
    bool detach_scores_in_attention = false;

    void validate() const {
        if (feature_dim <= 0 || feature_dim % 4 != 0) {
            throw ConfigError("feature dimension " + std::to_string(feature_dim) + " must be a positive multiple of 4");
        }
        if (kernel_size < 1) throw ConfigError("kernel size must be >= 1");
        if (attention_hidden < 1) throw ConfigError("attention hidden width must be >= 1");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    }
};

/// Per-video quantities produced by one forward pass. All score sequences are T x 1.
template <typename Scalar>
struct ModelOutput {
    Var<Scalar> embedded;  // F_e, T x D
    Var<Scalar> attention;  // A
    Var<Scalar> original;  // S_o
    Var<Scalar> attended;  // S_a = A * S_o
    Var<Scalar> suppressed_original;  // S_so
    Var<Scalar> suppressed_attended;  // S_sa
    double theta = 0.0;
    std::vector<bool> retained;  // A[j] < theta
};

/// Floating threshold between the smallest and largest attention value of one video.
template <typename Derived>
double suppression_threshold(const Eigen::MatrixBase<Derived>& attention, double eps) {
    if (!(eps >= 0.0 && eps <= 1.0)) throw ParameterError("suppressed rate must be in [0, 1], got " + std::to_string(eps));
    if (attention.size() == 0) throw ShapeError("suppression_threshold: empty attention");
    const double lo = static_cast<double>(attention.minCoeff());
    const double hi = static_cast<double>(attention.maxCoeff());
    return (hi - lo) * eps + lo;
}

template <typename Scalar>
struct BranchScores {
    Var<Scalar> attended;
    Var<Scalar> suppressed_original;
    Var<Scalar> suppressed_attended;
    double theta = 0.0;
    std::vector<bool> retained;
};

/// Attention-weighted and suppressed score branches.
///
/// Snippets with A[j] >= theta are the most discriminative ones; their scores
/// are multiplied by `beta` (0 removes them). The mask is built from the
/// attention values only, so no gradient flows through theta.
template <typename Scalar>
BranchScores<Scalar> branch_scores(const Var<Scalar>& original, const Var<Scalar>& attention, double eps, double beta,
                                   bool detach_original = false) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw ParameterError("suppression scale must be in [0, 1], got " + std::to_string(beta));
    if (original.rows() != attention.rows() || original.cols() != 1 || attention.cols() != 1) {
        throw ShapeError("branch_scores: expected matching T x 1 scores and attention");
    }
    Tape<Scalar>& tape = attention.tape();
    BranchScores<Scalar> out;
    out.theta = suppression_threshold(attention.value(), eps);

    const Eigen::Index steps = attention.rows();
    Matrix<Scalar> mask(steps, 1);
    out.retained.resize(static_cast<std::size_t>(steps));
    for (Eigen::Index j = 0; j < steps; ++j) {
        const bool keep = static_cast<double>(attention.value()(j, 0)) < out.theta;
        out.retained[static_cast<std::size_t>(j)] = keep;
        tape.note_branch(keep ? 7u : 6u);
        mask(j, 0) = keep ? Scalar(1) : Scalar(beta);
    }
    const Var<Scalar> mask_var = tape.constant(std::move(mask));
    const Var<Scalar> scores = detach_original ? tape.constant(original.value()) : original;
    out.attended = elementwise_mul(attention, scores);
    out.suppressed_original = elementwise_mul(original, mask_var);
    out.suppressed_attended = elementwise_mul(out.attended, mask_var);
    return out;
}

/// The detector: temporal embedding, anomalous attention, snippet classifier.
template <typename Scalar>
class Model {
public:
    explicit Model(ModelConfig config) : config_(config) {
        config_.validate();
        const Eigen::Index d = config_.feature_dim;
        const Eigen::Index k = config_.kernel_size;
        nonlocal_ = NonLocalBlock::create(params_, "embed.nonlocal", d, config_.nonlocal_output_projection);
        dilated_ = DilatedBranch::create(params_, "embed.local", d, k);
        aggregate_ = ConvLayer::create(params_, "embed.aggregate", d, d, k, 1);
        attention_hidden_ = ConvLayer::create(params_, "attention.unit1", d, config_.attention_hidden, k, 1);
        attention_out_ = ConvLayer::create(params_, "attention.unit2", config_.attention_hidden, 1, k, 1);
        Eigen::Index in = d;
        for (std::size_t i = 0; i < kClassifierWidths.size(); ++i) {
            classifier_[i] = AffineLayer::create(params_, "classifier.fc" + std::to_string(i + 1), in, kClassifierWidths[i]);
            in = kClassifierWidths[i];
        }
    }

    /// Randomly initialised model (see ParameterSet::initialize).
    static Model create(const ModelConfig& config, std::uint64_t seed) {
        Model m(config);
        m.params_.initialize(seed);
        return m;
    }

    [[nodiscard]] const ModelConfig& config() const { return config_; }
    [[nodiscard]] ParameterSet<Scalar>& params() { return params_; }
    [[nodiscard]] const ParameterSet<Scalar>& params() const { return params_; }

    [[nodiscard]] Bound<Scalar> bind(Tape<Scalar>& tape, bool requires_grad = true) const {
        return params_.bind(tape, requires_grad);
    }

    [[nodiscard]] const NonLocalBlock& nonlocal() const { return nonlocal_; }
    [[nodiscard]] const DilatedBranch& dilated() const { return dilated_; }

    /// F_e = F + TC(concat(F_l1, F_l2, F_l3, F_g)).
    Var<Scalar> temporal_embed(const Bound<Scalar>& bound, const Var<Scalar>& features) const {
        check_features(features);
        const auto local = dilated_(bound, features);
        const Var<Scalar> global = nonlocal_(bound, features);
        const Var<Scalar> fused = concat_channels<Scalar>({local[0], local[1], local[2], global});
        return add(features, aggregate_(bound, fused));
    }

    /// A in (0,1)^T from two (conv, LeakyReLU) units and a sigmoid.
    Var<Scalar> attention_forward(const Bound<Scalar>& bound, const Var<Scalar>& embedded) const {
        const Scalar slope = Scalar(config_.leaky_slope);
        Var<Scalar> h = leaky_relu(attention_hidden_(bound, embedded), slope);
        h = attention_out_(bound, h);
        if (config_.attention_final_leaky) h = leaky_relu(h, slope);
        return sigmoid(h);
    }

    /// S_o per snippet: MLP with ReLU + dropout after the hidden layers, sigmoid output.
    template <typename Rng>
    Var<Scalar> classify(const Bound<Scalar>& bound, const Var<Scalar>& embedded, bool training, Rng& rng) const {
        Var<Scalar> h = embedded;
        for (std::size_t i = 0; i + 1 < classifier_.size(); ++i) {
            h = dropout(relu(classifier_[i](bound, h)), config_.dropout, training, rng);
        }
        return sigmoid(classifier_.back()(bound, h));
    }

    template <typename Rng>
    ModelOutput<Scalar> forward(const Bound<Scalar>& bound, const Var<Scalar>& features, double eps, double beta,
                                bool training, Rng& rng) const {
        if (features.rows() < 1) throw ShapeError("forward: video has no snippets");
        if (!features.value().allFinite()) throw NonFiniteError("forward: non-finite feature values");
        ModelOutput<Scalar> out;
        out.embedded = temporal_embed(bound, features);
        out.attention = attention_forward(bound, out.embedded);
        out.original = classify(bound, out.embedded, training, rng);
        BranchScores<Scalar> b = branch_scores(out.original, out.attention, eps, beta, config_.detach_scores_in_attention);
        out.attended = b.attended;
        out.suppressed_original = b.suppressed_original;
        out.suppressed_attended = b.suppressed_attended;
        out.theta = b.theta;
        out.retained = std::move(b.retained);
        return out;
    }

private:
    void check_features(const Var<Scalar>& features) const {
        if (features.cols() != config_.feature_dim) {
            throw ShapeError("model expects " + std::to_string(config_.feature_dim) + " channels, got " +
                             std::to_string(features.cols()));
        }
    }

    ModelConfig config_;
    ParameterSet<Scalar> params_;
    NonLocalBlock nonlocal_;
    DilatedBranch dilated_;
    ConvLayer aggregate_;
    ConvLayer attention_hidden_;
    ConvLayer attention_out_;
    std::array<AffineLayer, kClassifierWidths.size()> classifier_;
};

}  // namespace savad
