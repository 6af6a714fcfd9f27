#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "savad/model.hpp"

namespace savad {

struct LossConfig {
    double eps = 0.2;     // suppressed rate
    double alpha = 0.8;   // weight of the unsuppressed branches
    double gamma = 0.8;   // attention norm weight
    double mu = 0.01;     // smoothness weight
    double sparsity_weight = 1.0;
    long switch_iter = 400;  // guide target becomes binarised from this step on
    double topk_fraction = 1.0 / 16.0;
    double bce_clamp = 1e-7;

    void validate() const {
        if (!(eps >= 0.0 && eps <= 1.0)) throw ConfigError("eps must be in [0, 1]");
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
        if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
        if (!(mu >= 0.0)) throw ConfigError("mu must be >= 0");
        if (!(sparsity_weight >= 0.0)) throw ConfigError("sparsity weight must be >= 0");
        if (switch_iter < 0) throw ConfigError("switch iteration M must be >= 0");
        if (!(topk_fraction > 0.0 && topk_fraction <= 1.0)) throw ConfigError("topk_fraction must be in (0, 1]");
        if (!(bce_clamp > 0.0 && bce_clamp < 0.5)) throw ConfigError("bce clamp must be in (0, 0.5)");
    }
};

/// Every term of the training objective, already averaged over the batch.
struct LossBreakdown {
    double c_o = 0.0;
    double c_a = 0.0;
    double c_so = 0.0;
    double c_sa = 0.0;
    double c_all = 0.0;
    double guide_neg = 0.0;
    double guide_pos = 0.0;
    double norm = 0.0;
    double sm = 0.0;
    double sp = 0.0;
    double total = 0.0;
    bool guide_hard = false;  // step >= M: binarised positive guide target

    /// total rebuilt from the individual terms.
    [[nodiscard]] double reassemble(const LossConfig& cfg) const {
        return cfg.alpha * (c_o + c_a) + (1.0 - cfg.alpha) * (c_so + c_sa) + cfg.gamma * norm + guide_neg + guide_pos +
               cfg.mu * sm + cfg.sparsity_weight * sp;
    }

    LossBreakdown& operator+=(const LossBreakdown& o) {
        c_o += o.c_o;
        c_a += o.c_a;
        c_so += o.c_so;
        c_sa += o.c_sa;
        c_all += o.c_all;
        guide_neg += o.guide_neg;
        guide_pos += o.guide_pos;
        norm += o.norm;
        sm += o.sm;
        sp += o.sp;
        total += o.total;
        return *this;
    }
};

/// k = max(1, ceil(T * fraction)).
inline Eigen::Index topk_count(Eigen::Index steps, double fraction) {
    const auto k = static_cast<Eigen::Index>(std::ceil(static_cast<double>(steps) * fraction - 1e-12));
    return std::clamp<Eigen::Index>(k, 1, steps);
}

/// Video-level score: mean of the k largest snippet scores.
template <typename Scalar>
Var<Scalar> video_score(const Var<Scalar>& scores, double topk_fraction) {
    if (scores.rows() < 1) throw ShapeError("video_score: empty score sequence");
    return topk_mean(scores, topk_count(scores.rows(), topk_fraction));
}

/// MSE of a normal video's attention against all zeros.
template <typename Scalar>
Var<Scalar> guide_loss_neg(const Var<Scalar>& attention) {
    return mean(square(attention));
}

/// Binarised classifier scores (strictly above 0.5).
template <typename Scalar>
Matrix<Scalar> binarize_scores(const Matrix<Scalar>& scores) {
    return scores.unaryExpr([](Scalar v) { return v > Scalar(0.5) ? Scalar(1) : Scalar(0); });
}

/// MSE of an abnormal video's attention against the (detached) classifier
/// scores before step M, and against their binarisation from M on.
/// `detached_scores`, when given, replaces the value of `original` as the
/// target source (used to hold stop-gradient quantities fixed in checks).
template <typename Scalar>
Var<Scalar> guide_loss_pos(const Var<Scalar>& attention, const Var<Scalar>& original, long step, long switch_iter,
                           const Matrix<Scalar>* detached_scores = nullptr) {
    if (attention.rows() != original.rows() || attention.cols() != original.cols()) {
        throw ShapeError("guide_loss_pos: attention and scores differ in shape");
    }
    const Matrix<Scalar>& source = detached_scores ? *detached_scores : original.value();
    if (source.rows() != original.rows() || source.cols() != original.cols()) {
        throw ShapeError("guide_loss_pos: detached scores differ in shape");
    }
    Matrix<Scalar> target = step < switch_iter ? source : binarize_scores(source);
    return mean(square(sub(attention, attention.tape().constant(std::move(target)))));
}

/// Mean absolute attention.
template <typename Scalar>
Var<Scalar> norm_loss(const Var<Scalar>& attention) {
    return scale(abs_sum(attention), Scalar(1) / Scalar(attention.value().size()));
}

template <typename Scalar>
struct SmoothSparse {
    Var<Scalar> smooth;
    Var<Scalar> sparse;
};

/// Mean squared neighbour difference and mean score of one sequence.
template <typename Scalar>
SmoothSparse<Scalar> smooth_sparse(const Var<Scalar>& scores) {
    if (scores.rows() < 1) throw ShapeError("smooth_sparse: empty score sequence");
    SmoothSparse<Scalar> out;
    out.smooth = scores.rows() == 1 ? scores.tape().constant(Matrix<Scalar>::Zero(1, 1)) : mean(square(diff_rows(scores)));
    out.sparse = mean(scores);
    return out;
}

/// Number of videos per label in a batch; per-video terms are divided by these.
struct BatchCounts {
    std::size_t total = 0;
    std::size_t positive = 0;
    std::size_t negative = 0;

    static BatchCounts of(std::span<const int> labels) {
        BatchCounts c;
        for (int l : labels) {
            if (l != 0 && l != 1) throw UsageError("labels must be 0 or 1");
            ++c.total;
            (l == 1 ? c.positive : c.negative) += 1;
        }
        return c;
    }
};

/// One video's contribution to each loss term.
template <typename Scalar>
struct LossTerms {
    Var<Scalar> c_o, c_a, c_so, c_sa;
    Var<Scalar> guide_neg, guide_pos, norm, sm, sp;

    LossTerms& operator+=(const LossTerms& o) {
        c_o = c_o + o.c_o;
        c_a = c_a + o.c_a;
        c_so = c_so + o.c_so;
        c_sa = c_sa + o.c_sa;
        guide_neg = guide_neg + o.guide_neg;
        guide_pos = guide_pos + o.guide_pos;
        norm = norm + o.norm;
        sm = sm + o.sm;
        sp = sp + o.sp;
        return *this;
    }
};

/// Per-branch BCE of the pooled video score, divided by the batch size.
template <typename Scalar>
void add_classification_terms(LossTerms<Scalar>& terms, const ModelOutput<Scalar>& out, int label,
                              const LossConfig& cfg, const BatchCounts& counts) {
    const Scalar w = Scalar(1) / Scalar(counts.total);
    const double y = label;
    auto bce = [&](const Var<Scalar>& s) {
        return scale(binary_cross_entropy(video_score(s, cfg.topk_fraction), y, cfg.bce_clamp), w);
    };
    terms.c_o = bce(out.original);
    terms.c_a = bce(out.attended);
    terms.c_so = bce(out.suppressed_original);
    terms.c_sa = bce(out.suppressed_attended);
}

/// All terms of one video. Guide/norm/smoothness/sparsity terms are averaged
/// over the videos sharing this video's label; absent terms are zero constants.
template <typename Scalar>
LossTerms<Scalar> video_loss_terms(const ModelOutput<Scalar>& out, int label, long step, const LossConfig& cfg,
                                   const BatchCounts& counts, const Matrix<Scalar>* detached_scores = nullptr) {
    Tape<Scalar>& tape = out.attention.tape();
    const auto zero = [&] { return tape.constant(Matrix<Scalar>::Zero(1, 1)); };
    LossTerms<Scalar> t;
    add_classification_terms(t, out, label, cfg, counts);
    if (label == 0) {
        t.guide_neg = scale(guide_loss_neg(out.attention), Scalar(1) / Scalar(counts.negative));
        t.guide_pos = zero();
        t.norm = zero();
        t.sm = zero();
        t.sp = zero();
    } else {
        const Scalar w = Scalar(1) / Scalar(counts.positive);
        t.guide_neg = zero();
        t.guide_pos = scale(guide_loss_pos(out.attention, out.original, step, cfg.switch_iter, detached_scores), w);
        t.norm = scale(norm_loss(out.attention), w);
        // smoothness and sparsity act on the original and attention-weighted branches
        const SmoothSparse<Scalar> so = smooth_sparse(out.original);
        const SmoothSparse<Scalar> sa = smooth_sparse(out.attended);
        t.sm = scale(so.smooth + sa.smooth, w);
        t.sp = scale(so.sparse + sa.sparse, w);
    }
    return t;
}

template <typename Scalar>
struct CombinedLoss {
    Var<Scalar> total;
    LossBreakdown breakdown;
};

/// Weighted sum L = L_c_all + gamma*L_norm + L_guide_neg + L_guide_pos + mu*L_sm + w_sp*L_sp.
template <typename Scalar>
CombinedLoss<Scalar> combine_terms(const LossTerms<Scalar>& t, long step, const LossConfig& cfg) {
    const Scalar a = Scalar(cfg.alpha);
    const Var<Scalar> c_all = a * (t.c_o + t.c_a) + (Scalar(1) - a) * (t.c_so + t.c_sa);
    CombinedLoss<Scalar> out;
    out.total = c_all + Scalar(cfg.gamma) * t.norm + t.guide_neg + t.guide_pos + Scalar(cfg.mu) * t.sm +
                Scalar(cfg.sparsity_weight) * t.sp;
    LossBreakdown& b = out.breakdown;
    b.c_o = t.c_o.item();
    b.c_a = t.c_a.item();
    b.c_so = t.c_so.item();
    b.c_sa = t.c_sa.item();
    b.c_all = c_all.item();
    b.guide_neg = t.guide_neg.item();
    b.guide_pos = t.guide_pos.item();
    b.norm = t.norm.item();
    b.sm = t.sm.item();
    b.sp = t.sp.item();
    b.total = out.total.item();
    b.guide_hard = step >= cfg.switch_iter;
    return out;
}

/// Batch objective on one tape. `detached_scores` optionally supplies, per
/// video, fixed values for the stop-gradient guide targets.
template <typename Scalar>
CombinedLoss<Scalar> total_loss(std::span<const ModelOutput<Scalar>> outputs, std::span<const int> labels, long step,
                                const LossConfig& cfg, std::span<const Matrix<Scalar>> detached_scores = {}) {
    if (outputs.empty()) throw UsageError("total_loss: empty batch");
    if (outputs.size() != labels.size()) throw UsageError("total_loss: outputs and labels differ in length");
    if (!detached_scores.empty() && detached_scores.size() != outputs.size()) {
        throw UsageError("total_loss: need one detached score sequence per video");
    }
    const BatchCounts counts = BatchCounts::of(labels);
    auto terms = [&](std::size_t i) {
        return video_loss_terms(outputs[i], labels[i], step, cfg, counts,
                                detached_scores.empty() ? nullptr : &detached_scores[i]);
    };
    LossTerms<Scalar> sum = terms(0);
    for (std::size_t i = 1; i < outputs.size(); ++i) sum += terms(i);
    return combine_terms(sum, step, cfg);
}

template <typename Scalar>
struct ClassificationLoss {
    Var<Scalar> c_o, c_a, c_so, c_sa, c_all;
};

/// The four branch BCE losses (batch means) and their alpha-mix.
template <typename Scalar>
ClassificationLoss<Scalar> classification_loss(std::span<const ModelOutput<Scalar>> outputs, std::span<const int> labels,
                                               const LossConfig& cfg) {
    if (outputs.empty()) throw UsageError("classification_loss: empty batch");
    if (outputs.size() != labels.size()) throw UsageError("classification_loss: outputs and labels differ in length");
    const BatchCounts counts = BatchCounts::of(labels);
    ClassificationLoss<Scalar> out;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        LossTerms<Scalar> t;
        add_classification_terms(t, outputs[i], labels[i], cfg, counts);
        if (i == 0) {
            out.c_o = t.c_o;
            out.c_a = t.c_a;
            out.c_so = t.c_so;
            out.c_sa = t.c_sa;
        } else {
            out.c_o = out.c_o + t.c_o;
            out.c_a = out.c_a + t.c_a;
            out.c_so = out.c_so + t.c_so;
            out.c_sa = out.c_sa + t.c_sa;
        }
    }
    const Scalar a = Scalar(cfg.alpha);
    out.c_all = a * (out.c_o + out.c_a) + (Scalar(1) - a) * (out.c_so + out.c_sa);
    return out;
}

}  // namespace savad
