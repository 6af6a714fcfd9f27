#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "savad/gradcheck_suite.hpp"
#include "savad/losses.hpp"
#include "support.hpp"

using namespace savad;
using namespace savad::testing;
using V = Var<double>;

namespace {

Mat column(std::initializer_list<double> v) {
    Mat m(static_cast<Eigen::Index>(v.size()), 1);
    Eigen::Index i = 0;
    for (double x : v) m(i++, 0) = x;
    return m;
}

// ModelOutput assembled from given attention and classifier scores.
ModelOutput<double> output_from(Tape<double>& t, const Mat& attention, const Mat& scores, double eps = 0.2) {
    ModelOutput<double> o;
    o.attention = t.leaf(attention);
    o.original = t.leaf(scores);
    o.embedded = t.constant(Mat::Zero(attention.rows(), 4));
    BranchScores<double> b = branch_scores(o.original, o.attention, eps, 0.0);
    o.attended = b.attended;
    o.suppressed_original = b.suppressed_original;
    o.suppressed_attended = b.suppressed_attended;
    o.theta = b.theta;
    o.retained = b.retained;
    return o;
}

double bce(double p, int y) {
    p = std::clamp(p, 1e-7, 1.0 - 1e-7);
    return y ? -std::log(p) : -std::log(1.0 - p);
}

double sort_topk_mean(std::vector<double> v, std::size_t k) {
    std::sort(v.begin(), v.end(), std::greater<>());
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += v[i];
    return s / static_cast<double>(k);
}

}  // namespace

TEST_CASE("video_score: top-k mean") {
    Tape<double> t;
    CHECK(video_score(t.leaf(column({0.37})), 1.0 / 16).item() == 0.37);
    CHECK(video_score(t.leaf(column({0.9, 0.1, 0.2, 0.3})), 1.0 / 16).item() == 0.9);
    CHECK(topk_count(64, 1.0 / 16) == 4);
    CHECK(topk_count(65, 1.0 / 16) == 5);
    CHECK(topk_count(1, 1.0 / 16) == 1);
    CHECK(topk_count(10, 1.0) == 10);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> frac(0.01, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const Mat s = random_mat(rng, 1 + trial, 1, 0.0, 1.0);
        const double f = frac(rng);
        const auto k = static_cast<std::size_t>(topk_count(s.rows(), f));
        CHECK(k == static_cast<std::size_t>(std::max(1.0, std::ceil(static_cast<double>(s.rows()) * f - 1e-12))));
        const double ref = sort_topk_mean(std::vector<double>(s.data(), s.data() + s.size()), k);
        CHECK(std::abs(video_score(t.leaf(s), f).item() - ref) < 1e-12);
    }
}

TEST_CASE("video_score: ties go to the lower index") {
    Mat s = column({0.5, 0.7, 0.5, 0.5});
    CHECK(topk_indices<double>(s, 2) == std::vector<Eigen::Index>{1, 0});
    Tape<double> t;
    const V x = t.leaf(s);
    t.backward(topk_mean(x, 2));
    CHECK(x.grad() == column({0.5, 0.5, 0.0, 0.0}));
}

TEST_CASE("classification terms: ln 2 at 0.5, clamped optimum, alpha = 1") {
    LossConfig cfg;
    {
        Tape<double> t;
        const std::vector<ModelOutput<double>> outs{output_from(t, Mat::Constant(4, 1, 0.5), Mat::Constant(4, 1, 0.5)),
                                                    output_from(t, Mat::Constant(4, 1, 0.5), Mat::Constant(4, 1, 0.5))};
        const std::vector<int> labels{0, 1};
        const auto c = classification_loss<double>(outs, labels, cfg);
        CHECK(c.c_o.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    {
        // pooled 0 for the normal video and 1 for the abnormal one
        Tape<double> t;
        const std::vector<ModelOutput<double>> outs{output_from(t, Mat::Constant(4, 1, 1.0), Mat::Zero(4, 1)),
                                                    output_from(t, Mat::Constant(4, 1, 1.0), Mat::Ones(4, 1))};
        const std::vector<int> labels{0, 1};
        const auto c = classification_loss<double>(outs, labels, cfg);
        CHECK(c.c_o.item() < 2e-7);
        CHECK(c.c_a.item() < 2e-7);
    }
    {
        std::mt19937_64 rng(2);
        LossConfig one = cfg;
        one.alpha = 1.0;
        Tape<double> t;
        const std::vector<ModelOutput<double>> outs{output_from(t, random_mat(rng, 6, 1, 0, 1), random_mat(rng, 6, 1, 0, 1)),
                                                    output_from(t, random_mat(rng, 6, 1, 0, 1), random_mat(rng, 6, 1, 0, 1))};
        const std::vector<int> labels{1, 0};
        const auto c = classification_loss<double>(outs, labels, one);
        CHECK(c.c_all.item() == c.c_o.item() + c.c_a.item());
        CHECK(c.c_so.item() > 0.0);
    }
    Tape<double> t;
    CHECK_THROWS_AS(classification_loss<double>({}, {}, cfg), UsageError);
    CHECK_THROWS_AS(total_loss<double>({}, {}, 0, cfg), UsageError);
}

TEST_CASE("guide_loss_neg") {
    Tape<double> t;
    CHECK(guide_loss_neg(t.leaf(Mat::Zero(5, 1))).item() == 0.0);
    CHECK(guide_loss_neg(t.leaf(column({0.5, 0.5}))).item() == 0.25);
    std::mt19937_64 rng(3);
    const Mat a = random_mat(rng, 9, 1, 0, 1);
    double ref = 0.0;
    for (Eigen::Index j = 0; j < 9; ++j) ref += a(j, 0) * a(j, 0);
    CHECK(std::abs(guide_loss_neg(t.leaf(a)).item() - ref / 9.0) < 1e-15);
}

TEST_CASE("guide_loss_pos: soft target before M, binarised after") {
    Tape<double> t;
    const Mat s = column({0.2, 0.7, 0.4});
    CHECK(guide_loss_pos(t.leaf(s), t.leaf(s), 10, 400).item() == 0.0);
    CHECK(guide_loss_pos(t.leaf(Mat::Zero(3, 1)), t.leaf(Mat::Constant(3, 1, 0.5)), 400, 400).item() == 0.0);
    CHECK(guide_loss_pos(t.leaf(column({1.0, 0.0})), t.leaf(column({0.6, 0.4})), 500, 400).item() == 0.0);
    CHECK(guide_loss_pos(t.leaf(column({1.0, 0.0})), t.leaf(column({0.6, 0.4})), 399, 400).item() ==
          doctest::Approx((0.16 + 0.16) / 2).epsilon(1e-14));
    CHECK(binarize_scores<double>(column({0.5, 0.5000001, 0.2})) == column({0.0, 1.0, 0.0}));
}

TEST_CASE("guide_loss_pos: the target is never differentiated") {
    for (long step : {0L, 600L}) {
        Tape<double> t;
        const V a = t.leaf(column({0.3, 0.9}));
        const V s = t.leaf(column({0.8, 0.1}));
        t.backward(guide_loss_pos(a, s, step, 400));
        CHECK(s.grad() == Mat::Zero(2, 1));
        CHECK(a.grad().cwiseAbs().maxCoeff() > 0.0);
    }
}

TEST_CASE("norm_loss and smooth_sparse") {
    Tape<double> t;
    CHECK(norm_loss(t.leaf(Mat::Zero(3, 1))).item() == 0.0);
    CHECK(norm_loss(t.leaf(column({1, 0, 1, 0}))).item() == 0.5);
    std::mt19937_64 rng(4);
    const Mat a = random_mat(rng, 7, 1, 0, 1);
    CHECK(std::abs(norm_loss(t.leaf(a)).item() - a.sum() / 7.0) < 1e-15);

    const auto flat = smooth_sparse(t.leaf(Mat::Constant(5, 1, 0.3)));
    CHECK(flat.smooth.item() == 0.0);
    const auto zoz = smooth_sparse(t.leaf(column({0, 1, 0})));
    CHECK(zoz.smooth.item() == 1.0);
    CHECK(zoz.sparse.item() == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    const auto one = smooth_sparse(t.leaf(column({0.42})));
    CHECK(one.smooth.item() == 0.0);
    CHECK(one.sparse.item() == 0.42);
}

TEST_CASE("set-level losses ignore snippet order, smoothness does not") {
    std::mt19937_64 rng(5);
    const Mat a = random_mat(rng, 8, 1, 0, 1);
    const Mat s = random_mat(rng, 8, 1, 0, 1);
    std::vector<int> perm{3, 0, 7, 5, 1, 6, 2, 4};
    Mat ap(8, 1), sp(8, 1);
    for (int i = 0; i < 8; ++i) {
        ap(i, 0) = a(perm[i], 0);
        sp(i, 0) = s(perm[i], 0);
    }
    Tape<double> t;
    CHECK(std::abs(norm_loss(t.leaf(a)).item() - norm_loss(t.leaf(ap)).item()) < 1e-15);
    CHECK(std::abs(guide_loss_neg(t.leaf(a)).item() - guide_loss_neg(t.leaf(ap)).item()) < 1e-15);
    for (long step : {0L, 400L}) {
        CHECK(std::abs(guide_loss_pos(t.leaf(a), t.leaf(s), step, 400).item() -
                       guide_loss_pos(t.leaf(ap), t.leaf(sp), step, 400).item()) < 1e-15);
    }
    CHECK(smooth_sparse(t.leaf(s)).smooth.item() != smooth_sparse(t.leaf(sp)).smooth.item());
}

TEST_CASE("total_loss: zero-weight model breakdown") {
    LossConfig cfg;
    Tape<double> t;
    const Mat half = Mat::Constant(16, 1, 0.5);
    const std::vector<ModelOutput<double>> outs{output_from(t, half, half), output_from(t, half, half)};
    const std::vector<int> labels{0, 1};
    const CombinedLoss<double> c = total_loss<double>(outs, labels, 0, cfg);
    const LossBreakdown& b = c.breakdown;
    CHECK(b.guide_neg == 0.25);
    CHECK(b.guide_pos == 0.0);
    CHECK(b.norm == 0.5);
    CHECK(b.sm == 0.0);
    CHECK(b.sp == doctest::Approx(0.5 + 0.25).epsilon(1e-15));
    CHECK(std::abs(b.c_o - std::log(2.0)) < 1e-12);
    CHECK(std::abs(b.c_a - (bce(0.25, 0) + bce(0.25, 1)) / 2) < 1e-12);
    CHECK(std::abs(b.c_so - (bce(0.0, 0) + bce(0.0, 1)) / 2) < 1e-12);
    CHECK(std::abs(b.c_sa - b.c_so) < 1e-12);
    CHECK(std::abs(b.reassemble(cfg) - b.total) < 1e-12);
    CHECK(b.guide_hard == false);
}

TEST_CASE("total_loss: reassembly, coefficient zeroing and non-negativity") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        LossConfig cfg;
        cfg.alpha = std::uniform_real_distribution<double>(0, 1)(rng);
        cfg.gamma = trial % 5 == 0 ? 0.0 : 0.8;
        cfg.mu = trial % 5 == 0 ? 0.0 : 0.01;
        Tape<double> t;
        std::vector<ModelOutput<double>> outs;
        std::vector<int> labels;
        for (int v = 0; v < 4; ++v) {
            const Eigen::Index T = 1 + (trial + v) % 9;
            outs.push_back(output_from(t, random_mat(rng, T, 1, 0, 1), random_mat(rng, T, 1, 0, 1)));
            labels.push_back(v % 2);
        }
        const long step = trial * 20;
        const LossBreakdown b = total_loss<double>(outs, labels, step, cfg).breakdown;
        CHECK(std::abs(b.reassemble(cfg) - b.total) < 1e-12);
        CHECK(b.guide_hard == (step >= cfg.switch_iter));
        for (double term : {b.c_o, b.c_a, b.c_so, b.c_sa, b.c_all, b.guide_neg, b.guide_pos, b.norm, b.sm, b.sp}) {
            CHECK(term >= 0.0);
            CHECK(std::isfinite(term));
        }
        if (cfg.gamma == 0.0) CHECK(std::abs(b.total - (b.c_all + b.guide_neg + b.guide_pos + b.sp)) < 1e-12);
    }
}

TEST_CASE("total_loss: alpha = 1 removes suppressed branches exactly") {
    std::mt19937_64 rng(7);
    LossConfig cfg;
    cfg.alpha = 1.0;
    Tape<double> t;
    const std::vector<ModelOutput<double>> outs{output_from(t, random_mat(rng, 6, 1, 0, 1), random_mat(rng, 6, 1, 0, 1)),
                                                output_from(t, random_mat(rng, 6, 1, 0, 1), random_mat(rng, 6, 1, 0, 1))};
    const std::vector<int> labels{0, 1};
    const CombinedLoss<double> c = total_loss<double>(outs, labels, 0, cfg);
    CHECK(c.breakdown.c_all == c.breakdown.c_o + c.breakdown.c_a);
    t.backward(c.total);
    // the suppressed branch nodes exist but carry no weight
    CHECK(c.breakdown.c_so > 0.0);
}

TEST_CASE("total_loss: one video per label reproduces single-video terms") {
    std::mt19937_64 rng(8);
    LossConfig cfg;
    const Mat an = random_mat(rng, 7, 1, 0, 1), sn = random_mat(rng, 7, 1, 0, 1);
    const Mat aa = random_mat(rng, 9, 1, 0, 1), sa = random_mat(rng, 9, 1, 0, 1);
    auto single = [&](const Mat& a, const Mat& s, int label) {
        Tape<double> t;
        const std::vector<ModelOutput<double>> outs{output_from(t, a, s)};
        const std::vector<int> labels{label};
        return total_loss<double>(outs, labels, 0, cfg).breakdown;
    };
    const LossBreakdown n = single(an, sn, 0);
    const LossBreakdown a = single(aa, sa, 1);
    Tape<double> t;
    const std::vector<ModelOutput<double>> outs{output_from(t, an, sn), output_from(t, aa, sa)};
    const std::vector<int> labels{0, 1};
    const LossBreakdown both = total_loss<double>(outs, labels, 0, cfg).breakdown;
    CHECK(both.guide_neg == doctest::Approx(n.guide_neg).epsilon(1e-14));
    CHECK(both.guide_pos == doctest::Approx(a.guide_pos).epsilon(1e-14));
    CHECK(both.norm == doctest::Approx(a.norm).epsilon(1e-14));
    CHECK(both.sm == doctest::Approx(a.sm).epsilon(1e-14));
    CHECK(both.sp == doctest::Approx(a.sp).epsilon(1e-14));
    CHECK(both.c_o == doctest::Approx((n.c_o + a.c_o) / 2).epsilon(1e-14));
    CHECK(both.c_sa == doctest::Approx((n.c_sa + a.c_sa) / 2).epsilon(1e-14));
}

TEST_CASE("total loss gradient matches finite differences at both guide phases") {
    for (const SuiteEntry& e : run_gradcheck_suite({.seed = 5})) {
        if (e.group != "model") continue;
        CAPTURE(e.name);
        CHECK(e.report.max_rel_error < 1e-4);
        CHECK(e.report.inputs.size() > 20);
    }
}

TEST_CASE("loss config validation") {
    LossConfig c;
    CHECK_NOTHROW(c.validate());
    c.alpha = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.topk_fraction = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.switch_iter = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
