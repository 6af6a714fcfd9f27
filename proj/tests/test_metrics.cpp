#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "savad/errors.hpp"
#include "savad/metrics.hpp"
#include "support.hpp"

using namespace savad;
using namespace savad::testing;
namespace fs = std::filesystem;

namespace {

using Labels = std::vector<std::uint8_t>;

double pairwise_auc(const std::vector<double>& s, const Labels& y) {
    double num = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!y[i]) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j]) continue;
            pairs += 1.0;
            num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return num / pairs;
}

double walk_ap(const std::vector<double>& s, const Labels& y) {
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return s[a] > s[b]; });
    double sum = 0.0;
    double tp = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (y[order[r]]) {
            tp += 1.0;
            sum += tp / static_cast<double>(r + 1);
        }
    }
    return sum / tp;
}

// Scores quantised to a few levels so ties actually happen.
std::pair<std::vector<double>, Labels> random_case(std::mt19937_64& rng, std::size_t n) {
    std::uniform_int_distribution<int> level(0, 7);
    std::bernoulli_distribution coin(0.3);
    std::vector<double> s(n);
    Labels y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = coin(rng) ? 1 : 0;
        s[i] = level(rng) * 0.125 + (y[i] ? 0.1 : 0.0);
    }
    y[0] = 1;
    y[1] = 0;
    return {s, y};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("metrics: fixed examples") {
    CHECK(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, Labels{0, 0, 1, 1}) == 1.0);
    CHECK(roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, Labels{0, 0, 1, 1}) == 0.0);
    CHECK(roc_auc(std::vector<double>(6, 0.3), Labels{0, 1, 0, 1, 1, 0}) == 0.5);
    CHECK(average_precision(std::vector<double>{0.2, 0.9}, Labels{1, 0}) == 0.5);
    CHECK(average_precision(std::vector<double>{0.9, 0.2}, Labels{1, 0}) == 1.0);
    CHECK(average_precision(std::vector<double>{0.5, 0.4, 0.3}, Labels{0, 1, 1}) == doctest::Approx((0.5 + 2.0 / 3) / 2));
}

TEST_CASE("metrics: undefined inputs") {
    CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, Labels{1, 1}), UndefinedMetricError);
    CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, Labels{0, 0}), UndefinedMetricError);
    CHECK_THROWS_AS(average_precision(std::vector<double>{0.1, 0.2}, Labels{0, 0}), UndefinedMetricError);
    CHECK_THROWS_AS(roc_curve(std::vector<double>{0.1}, Labels{1}), UndefinedMetricError);
    CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1}, Labels{1, 0}), std::invalid_argument);
}

TEST_CASE("metrics: agree with pairwise and rank-walk oracles") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const auto [s, y] = random_case(rng, 3 + static_cast<std::size_t>(trial % 40));
        CHECK(std::abs(roc_auc(s, y) - pairwise_auc(s, y)) < 1e-12);
        CHECK(std::abs(average_precision(s, y) - walk_ap(s, y)) < 1e-12);
    }
}

TEST_CASE("metrics: invariances") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const auto [s, y] = random_case(rng, 60);
        std::vector<double> warped(s.size());
        std::vector<double> neg(s.size());
        std::transform(s.begin(), s.end(), warped.begin(), [](double v) { return std::exp(3.0 * v) - 7.0; });
        std::transform(s.begin(), s.end(), neg.begin(), [](double v) { return -v; });
        CHECK(roc_auc(warped, y) == doctest::Approx(roc_auc(s, y)).epsilon(1e-12));
        CHECK(average_precision(warped, y) == doctest::Approx(average_precision(s, y)).epsilon(1e-12));
        CHECK(roc_auc(s, y) + roc_auc(neg, y) == doctest::Approx(1.0).epsilon(1e-12));

        // AUC does not care about the order videos are concatenated in
        std::vector<double> swapped(s.begin() + 30, s.end());
        swapped.insert(swapped.end(), s.begin(), s.begin() + 30);
        Labels swapped_y(y.begin() + 30, y.end());
        swapped_y.insert(swapped_y.end(), y.begin(), y.begin() + 30);
        CHECK(roc_auc(swapped, swapped_y) == doctest::Approx(roc_auc(s, y)).epsilon(1e-12));
    }
}

TEST_CASE("metrics: curves are monotone and end at the corners") {
    std::mt19937_64 rng(7);
    const auto [s, y] = random_case(rng, 100);
    const auto roc = roc_curve(s, y);
    CHECK(roc.front().x == 0.0);
    CHECK(roc.front().y == 0.0);
    CHECK(roc.back().x == 1.0);
    CHECK(roc.back().y == 1.0);
    for (std::size_t i = 1; i < roc.size(); ++i) {
        CHECK(roc[i].x >= roc[i - 1].x);
        CHECK(roc[i].y >= roc[i - 1].y);
        CHECK(roc[i].threshold < roc[i - 1].threshold);
    }
    // trapezoid area under the swept curve equals the rank statistic
    double area = 0.0;
    for (std::size_t i = 1; i < roc.size(); ++i) area += (roc[i].x - roc[i - 1].x) * (roc[i].y + roc[i - 1].y) / 2;
    CHECK(area == doctest::Approx(roc_auc(s, y)).epsilon(1e-12));

    const auto pr = pr_curve(s, y);
    CHECK(pr.back().x == 1.0);
    for (std::size_t i = 1; i < pr.size(); ++i) CHECK(pr[i].x >= pr[i - 1].x);
}

TEST_CASE("report: sub-AUC, original branch and outputs") {
    VideoTrace normal{"n0", 0, {0.1, 0.2, 0.1}, {0, 0, 0}};
    VideoTrace abnormal{"a0", 1, {0.3, 0.9, 0.8, 0.2}, {0, 1, 1, 0}};
    VideoTrace normal_o{"n0", 0, {0.5, 0.5, 0.5}, {0, 0, 0}};
    VideoTrace abnormal_o{"a0", 1, {0.5, 0.5, 0.5, 0.5}, {0, 1, 1, 0}};
    const EvalReport r = report_from_traces({normal, abnormal}, {normal_o, abnormal_o});
    CHECK(r.auc == 1.0);
    CHECK(r.ap == 1.0);
    REQUIRE(r.auc_sub);
    CHECK(*r.auc_sub == 1.0);
    CHECK(r.auc_original == 0.5);
    CHECK(r.n_videos == 2);
    CHECK(r.n_frames == 7);
    CHECK(r.n_positive == 2);

    // one abnormal video only: both protocols see the same frames
    const EvalReport single = report_from_traces({abnormal}, {});
    CHECK(single.auc == *single.auc_sub);

    const EvalReport no_sub = report_from_traces({normal, {"a1", 1, {0.9}, {1}}}, {});
    CHECK(!no_sub.auc_sub);

    VideoTrace broken{"b", 1, {0.1, 0.2}, {1}};
    CHECK_THROWS_AS(report_from_traces({normal, broken}, {}), std::invalid_argument);

    const auto dir = temp_dir("metrics_out");
    write_eval_outputs(dir, r, {normal, abnormal});
    const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
    CHECK(j["auc"].get<double>() == 1.0);
    CHECK(j["auc_original"].get<double>() == 0.5);
    const std::string roc = slurp(dir / "roc.csv");
    CHECK(roc.rfind("index,fpr,tpr,threshold\n", 0) == 0);
    CHECK(slurp(dir / "pr.csv").rfind("index,recall,precision,threshold\n", 0) == 0);
    CHECK(slurp(dir / "traces" / "a0.csv") == "index,value,label\n0,0.3,0\n1,0.9,1\n2,0.8,1\n3,0.2,0\n");
    CHECK(std::count(roc.begin(), roc.end(), '\n') == static_cast<long>(r.roc_points.size() + 1));
}
