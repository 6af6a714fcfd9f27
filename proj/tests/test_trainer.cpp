#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "savad/evaluate.hpp"
#include "savad/trainer.hpp"
#include "support.hpp"

using namespace savad;
using namespace savad::testing;

namespace {

SynthConfig tiny_synth(std::uint64_t seed = 3) {
    SynthConfig s;
    s.train_normal = 6;
    s.train_abnormal = 6;
    s.test_normal = 2;
    s.test_abnormal = 2;
    s.feature_dim = 8;
    s.min_snippets = 12;
    s.max_snippets = 30;
    s.seed = seed;
    return s;
}

TrainConfig tiny_train(long iterations) {
    TrainConfig c;
    c.iterations = iterations;
    c.batch_size = 4;
    c.segments = 16;
    c.seed = 9;
    c.lr = 1e-3;
    c.model.feature_dim = 8;
    c.model.attention_hidden = 16;
    return c;
}

const std::vector<Video>& tiny_videos() {
    static const std::vector<Video> videos = [] {
        const auto dir = temp_dir("trainer_data");
        const SynthResult r = generate_synthetic(tiny_synth(), dir);
        return load_videos(r.train);
    }();
    return videos;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("make_batch: composition and sampling rules") {
    std::mt19937_64 rng(1);
    const std::vector<std::size_t> one_n{7}, one_a{9};
    const Batch b = make_batch<std::mt19937_64>(one_n, one_a, 2, rng);
    CHECK(b.items == std::vector<std::size_t>{7, 9});
    CHECK(b.labels == std::vector<int>{0, 1});

    std::vector<std::size_t> normals(100), abnormals(100);
    for (std::size_t i = 0; i < 100; ++i) {
        normals[i] = i;
        abnormals[i] = 100 + i;
    }
    const Batch big = make_batch<std::mt19937_64>(normals, abnormals, 32, rng);
    CHECK(std::count(big.labels.begin(), big.labels.end(), 0) == 16);
    CHECK(std::count(big.labels.begin(), big.labels.end(), 1) == 16);
    CHECK(std::set<std::size_t>(big.items.begin(), big.items.end()).size() == 32);
    for (std::size_t i = 0; i < 32; ++i) CHECK((big.items[i] >= 100) == (big.labels[i] == 1));

    const std::vector<std::size_t> small{1, 2, 3};
    const Batch rep = make_batch<std::mt19937_64>(small, abnormals, 32, rng);
    for (std::size_t i = 0; i < 16; ++i) CHECK(std::set<std::size_t>{1, 2, 3}.count(rep.items[i]) == 1);

    std::mt19937_64 r1(5), r2(5);
    for (int i = 0; i < 10; ++i) {
        CHECK(make_batch<std::mt19937_64>(normals, abnormals, 8, r1).items ==
              make_batch<std::mt19937_64>(normals, abnormals, 8, r2).items);
    }
    CHECK_THROWS_AS(make_batch<std::mt19937_64>({}, abnormals, 4, rng), ConfigError);
    CHECK_THROWS_AS(make_batch<std::mt19937_64>(normals, abnormals, 5, rng), ConfigError);
}

TEST_CASE("adam_step: zero gradient, lr 0, and scalar reference") {
    ParameterSet<double> p;
    p.add("w", {1, 3});
    p[0].value << 0.5, -1.0, 2.0;
    const Mat before = p[0].value;
    AdamState<double> s(p);
    adam_step(p, {Mat::Zero(1, 3)}, s, 1e-3, 0.0);
    CHECK(p[0].value == before);
    CHECK(s.first[0] == Mat::Zero(1, 3));
    CHECK(s.second[0] == Mat::Zero(1, 3));
    CHECK(s.step == 1);
    adam_step(p, {Mat::Constant(1, 3, 0.7)}, s, 0.0, 5e-4);
    CHECK(p[0].value == before);
    CHECK(s.step == 2);

    // one step from fresh state moves by -lr * sign(g)
    ParameterSet<double> q;
    q.add("x", {1});
    q[0].value(0, 0) = 1.0;
    AdamState<double> sq(q);
    adam_step(q, {Mat::Constant(1, 1, -0.3)}, sq, 1e-4, 0.0);
    CHECK(std::abs(q[0].value(0, 0) - (1.0 + 1e-4 * 0.3 / (0.3 + 1e-8))) < 1e-15);
}

TEST_CASE("adam_step: matches a scalar recurrence with weight decay") {
    ParameterSet<double> p;
    p.add("x", {1});
    p[0].value(0, 0) = 0.8;
    AdamState<double> s(p);
    double x = 0.8, m = 0.0, v = 0.0;
    const double lr = 1e-2, wd = 5e-4;
    const double grads[] = {0.4, 0.4, -1.3};
    for (int t = 1; t <= 3; ++t) {
        adam_step(p, {Mat::Constant(1, 1, grads[t - 1])}, s, lr, wd);
        const double g = grads[t - 1] + wd * x;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, t));
        const double vh = v / (1 - std::pow(0.999, t));
        x -= lr * mh / (std::sqrt(vh) + 1e-8);
        CHECK(std::abs(p[0].value(0, 0) - x) < 1e-12);
    }
}

TEST_CASE("adam_step: non-finite gradients name the parameter") {
    ParameterSet<double> p;
    p.add("embed.w", {2});
    AdamState<double> s(p);
    try {
        adam_step(p, {Mat::Constant(1, 2, NAN)}, s, 1e-3, 0.0);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("embed.w") != std::string::npos);
    }
    CHECK(s.step == 0);
}

TEST_CASE("train: one iteration is one update and one log line") {
    Model<float> m = Model<float>::create(tiny_train(1).model, 4);
    const ParameterSet<float> before = m.params();
    int steps = 0, checkpoints = 0;
    TrainHooks hooks;
    hooks.on_step = [&](long it, const LossBreakdown&) { CHECK(it == steps++); };
    hooks.on_checkpoint = [&](long done, bool final) {
        ++checkpoints;
        CHECK(done == 1);
        CHECK(final);
    };
    train(m, tiny_videos(), tiny_train(1), hooks);
    CHECK(steps == 1);
    CHECK(checkpoints == 1);
    bool changed = false;
    for (std::size_t i = 0; i < before.size(); ++i) changed = changed || before[i].value != m.params()[i].value;
    CHECK(changed);
}

TEST_CASE("train: seeded runs are reproducible, also with worker threads") {
    auto run = [](int workers) {
        TrainConfig c = tiny_train(6);
        c.workers = workers;
        Model<float> m = Model<float>::create(c.model, c.seed);
        std::vector<std::string> log;
        TrainHooks h;
        h.on_step = [&](long it, const LossBreakdown& b) { log.push_back(log_line(it, b)); };
        train(m, tiny_videos(), c, h);
        return std::make_pair(to_arrays(m.params()), log);
    };
    const auto a = run(1);
    const auto b = run(1);
    const auto c = run(3);
    CHECK(a.second == b.second);
    CHECK(a.second == c.second);
    for (std::size_t i = 0; i < a.first.size(); ++i) {
        CHECK(a.first[i].values == b.first[i].values);
        CHECK(a.first[i].values == c.first[i].values);
    }
}

TEST_CASE("train: loss goes down over the first 50 iterations") {
    TrainConfig c = tiny_train(51);
    Model<float> m = Model<float>::create(c.model, c.seed);
    std::vector<double> totals;
    TrainHooks h;
    h.on_step = [&](long, const LossBreakdown& b) { totals.push_back(b.total); };
    train(m, tiny_videos(), c, h);
    REQUIRE(totals.size() == 51);
    CHECK(totals[50] < totals[0]);
    CHECK(m.params().all_finite());
}

TEST_CASE("train: guide branch switches exactly at M") {
    TrainConfig c = tiny_train(8);
    c.loss.switch_iter = 5;
    Model<float> m = Model<float>::create(c.model, c.seed);
    TrainHooks h;
    h.on_step = [&](long it, const LossBreakdown& b) {
        CHECK(b.guide_hard == (it >= 5));
        const auto j = nlohmann::json::parse(log_line(it, b));
        CHECK(j["guide_branch"] == (it < 5 ? "scores" : "binarized"));
        CHECK(j["iteration"] == it);
    };
    train(m, tiny_videos(), c, h);
}

TEST_CASE("train: configuration errors") {
    Model<float> m = Model<float>::create(tiny_train(1).model, 1);
    std::vector<Video> normals;
    for (const Video& v : tiny_videos())
        if (v.label == 0) normals.push_back(v);
    CHECK_THROWS_AS(train(m, normals, tiny_train(1)), ConfigError);
    TrainConfig odd = tiny_train(1);
    odd.batch_size = 3;
    CHECK_THROWS_AS(train(m, tiny_videos(), odd), ConfigError);
    TrainConfig wide = tiny_train(1);
    Model<float> other = Model<float>::create([] {
        ModelConfig mc;
        mc.feature_dim = 12;
        mc.attention_hidden = 4;
        return mc;
    }(), 1);
    CHECK_THROWS_AS(train(other, tiny_videos(), wide), DataError);
}

TEST_CASE("train_to_dir: log, periodic checkpoints and final model") {
    const auto dir = temp_dir("trainer_out");
    const SynthResult r = generate_synthetic(tiny_synth(), dir / "data");
    TrainConfig c = tiny_train(5);
    c.checkpoint_every = 2;
    train_to_dir(r.train, c, dir / "run");
    std::ifstream log(dir / "run" / "train_log.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
        const auto j = nlohmann::json::parse(line);
        for (const char* key : {"L_c_o", "L_c_a", "L_c_so", "L_c_sa", "L_c_all", "L_guide_neg", "L_guide_pos", "L_norm",
                                "L_sm", "L_sp", "total"})
            CHECK(j.contains(key));
        ++lines;
    }
    CHECK(lines == 5);
    for (const char* n : {"iter_000002.savd", "iter_000004.savd", "iter_000005.savd"})
        CHECK(std::filesystem::exists(dir / "run" / "checkpoints" / n));
    CHECK(!std::filesystem::exists(dir / "run" / "checkpoints" / "iter_000003.savd"));
    CHECK(slurp(dir / "run" / "model.savd") == slurp(dir / "run" / "checkpoints" / "iter_000005.savd"));
}

TEST_CASE("infer: frame expansion and zero model") {
    ModelConfig mc = tiny_train(1).model;
    const Model<float> zero(mc);
    std::mt19937_64 rng(2);
    const FeatureSequence x = random_mat(rng, 2, 8).cast<float>();
    const std::vector<double> frames = infer(zero, x);
    CHECK(frames.size() == 32);
    for (double f : frames) CHECK(f == 0.25);

    const Model<float> m = Model<float>::create(mc, 7);
    const auto snip = infer_snippets(m, Matrix<float>(x));
    const std::vector<double> f2 = infer(m, x);
    for (int i = 0; i < 16; ++i) CHECK(f2[i] == static_cast<double>(snip.attended(0, 0)));
    for (int i = 16; i < 32; ++i) CHECK(f2[i] == static_cast<double>(snip.attended(1, 0)));
}

TEST_CASE("infer: per-video scores do not depend on which other videos are evaluated") {
    const auto dir = temp_dir("trainer_infer");
    const SynthResult r = generate_synthetic(tiny_synth(4), dir);
    const Model<float> m = Model<float>::create(tiny_train(1).model, 8);
    const Evaluation all = evaluate(m, r.test);
    for (std::size_t i = 0; i < r.test.entries.size(); ++i) {
        Manifest only = r.test;
        only.entries = {r.test.entries[i]};
        std::vector<double> alone = infer(m, read_feature_file(r.test.resolve(r.test.entries[i].path)));
        alone.resize(all.traces[i].scores.size());
        CHECK(alone == all.traces[i].scores);
        if (r.test.entries[i].label == 1) {
            const Evaluation single = evaluate(m, only);
            CHECK(single.traces[0].scores == all.traces[i].scores);
        }
    }
}
