#include "savad/gradcheck_suite.hpp"

#include <random>

#include "savad/losses.hpp"

namespace savad {

namespace {

using Mat = Matrix<double>;
using V = Var<double>;
using Leaves = std::vector<V>;

Mat random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

// Contracting with a fixed random matrix makes every output element matter.
V contract(const V& x, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sum(elementwise_mul(x, x.tape().constant(random_matrix(rng, x.rows(), x.cols()))));
}

}  // namespace

std::vector<SuiteEntry> run_gradcheck_suite(const SuiteOptions& options) {
    std::mt19937_64 rng(options.seed);
    std::vector<SuiteEntry> entries;
    GradCheckOptions prim;
    prim.tol = options.primitive_tol;
    prim.seed = options.seed;

    auto check = [&](const std::string& name, const std::string& group, const Program<double>& fn,
                     const std::vector<Mat>& inputs, GradCheckOptions opts) {
        entries.push_back({name, group, grad_check<double>(fn, inputs, opts)});
    };
    const std::uint64_t salt = options.seed * 7919 + 1;

    for (Eigen::Index dilation : {1, 2, 4}) {
        check("conv1d k3 d" + std::to_string(dilation), "primitive",
              [=](Tape<double>&, const Leaves& x) { return contract(conv1d(x[0], x[1], std::optional<V>(x[2]), dilation), salt); },
              {random_matrix(rng, 9, 3), random_matrix(rng, 9, 4), random_matrix(rng, 1, 4)}, prim);
    }
    check("conv1d k1", "primitive",
          [=](Tape<double>&, const Leaves& x) { return contract(conv1d(x[0], x[1], std::optional<V>(), 1), salt); },
          {random_matrix(rng, 5, 4), random_matrix(rng, 4, 2)}, prim);
    check("affine", "primitive",
          [=](Tape<double>&, const Leaves& x) { return contract(affine(x[0], x[1], std::optional<V>(x[2])), salt); },
          {random_matrix(rng, 5, 4), random_matrix(rng, 4, 3), random_matrix(rng, 1, 3)}, prim);
    check("sigmoid(affine)", "primitive",
          [=](Tape<double>&, const Leaves& x) { return contract(sigmoid(affine(x[0], x[1], std::optional<V>(x[2]))), salt); },
          {random_matrix(rng, 4, 3), random_matrix(rng, 3, 2), random_matrix(rng, 1, 2)}, prim);
    check("matmul", "primitive", [=](Tape<double>&, const Leaves& x) { return contract(matmul(x[0], x[1]), salt); },
          {random_matrix(rng, 4, 3), random_matrix(rng, 3, 5)}, prim);
    check("matmul_nt", "primitive", [=](Tape<double>&, const Leaves& x) { return contract(matmul_nt(x[0], x[1]), salt); },
          {random_matrix(rng, 4, 3), random_matrix(rng, 6, 3)}, prim);
    check("relu", "primitive", [=](Tape<double>&, const Leaves& x) { return contract(relu(x[0]), salt); },
          {random_matrix(rng, 6, 3)}, prim);
    check("leaky_relu", "primitive", [=](Tape<double>&, const Leaves& x) { return contract(leaky_relu(x[0], 0.2), salt); },
          {random_matrix(rng, 6, 3)}, prim);
    check("softmax_rows", "primitive", [=](Tape<double>&, const Leaves& x) { return contract(softmax_rows(x[0]), salt); },
          {random_matrix(rng, 5, 4)}, prim);
    check("add/sub/mul", "primitive",
          [=](Tape<double>&, const Leaves& x) { return contract(elementwise_mul(add(x[0], x[1]), sub(x[0], x[1])), salt); },
          {random_matrix(rng, 4, 3), random_matrix(rng, 4, 3)}, prim);
    check("concat_channels", "primitive",
          [=](Tape<double>&, const Leaves& x) { return contract(concat_channels<double>({x[0], x[1], x[0]}), salt); },
          {random_matrix(rng, 4, 2), random_matrix(rng, 4, 3)}, prim);
    check("mean/square/abs_sum", "primitive",
          [](Tape<double>&, const Leaves& x) { return add(mean(square(x[0])), abs_sum(x[0])); },
          {random_matrix(rng, 5, 3)}, prim);
    check("diff_rows", "primitive", [=](Tape<double>&, const Leaves& x) { return mean(square(diff_rows(x[0]))); },
          {random_matrix(rng, 7, 1)}, prim);
    check("topk_mean", "primitive", [](Tape<double>&, const Leaves& x) { return topk_mean(x[0], 3); },
          {random_matrix(rng, 9, 1)}, prim);
    check("bce", "primitive",
          [](Tape<double>&, const Leaves& x) {
              return add(binary_cross_entropy(sigmoid(scale(sum(x[0]), 0.3)), 1.0),
                         binary_cross_entropy(sigmoid(scale(sum(x[0]), -0.2)), 0.0));
          },
          {random_matrix(rng, 3, 2)}, prim);
    check("dropout (fixed mask)", "primitive",
          [=](Tape<double>&, const Leaves& x) {
              std::mt19937_64 r(options.seed + 3);
              return contract(dropout(x[0], 0.5, true, r), salt);
          },
          {random_matrix(rng, 6, 4)}, prim);

    // composite blocks on a small architecture
    const Eigen::Index d = options.feature_dim;
    const Eigen::Index steps = options.steps;
    ModelConfig mc;
    mc.feature_dim = d;
    const Model<double> model = Model<double>::create(mc, options.seed + 11);
    std::vector<Mat> param_values;
    std::vector<std::string> param_names;
    for (const auto& p : model.params()) {
        param_values.push_back(p.value);
        param_names.push_back(p.name);
    }
    const Mat video_a = random_matrix(rng, steps, d);
    const Mat video_b = random_matrix(rng, steps, d) + Mat::Constant(steps, d, 0.5);

    GradCheckOptions layer = prim;
    layer.names = {"features"};
    check("nonlocal block", "layer",
          [&](Tape<double>& t, const Leaves& x) {
              const Bound<double> b = model.bind(t, false);
              return contract(model.nonlocal()(b, x[0]), salt);
          },
          {video_a}, layer);
    check("dilated branch", "layer",
          [&](Tape<double>& t, const Leaves& x) {
              const Bound<double> b = model.bind(t, false);
              const auto out = model.dilated()(b, x[0]);
              return add(add(contract(out[0], salt), contract(out[1], salt + 1)), contract(out[2], salt + 2));
          },
          {video_a}, layer);
    check("temporal embedding", "layer",
          [&](Tape<double>& t, const Leaves& x) { return contract(model.temporal_embed(model.bind(t, false), x[0]), salt); },
          {video_a}, layer);
    check("attention unit", "layer",
          [&](Tape<double>& t, const Leaves& x) { return contract(model.attention_forward(model.bind(t, false), x[0]), salt); },
          {video_a}, layer);
    check("classifier", "layer",
          [&](Tape<double>& t, const Leaves& x) {
              std::mt19937_64 r(0);
              return contract(model.classify(model.bind(t, false), x[0], false, r), salt);
          },
          {video_a}, layer);

    GradCheckOptions full;
    full.tol = options.model_tol;
    full.seed = options.seed;
    full.max_coords = options.model_coords;
    full.names = param_names;
    LossConfig lc;
    // The guide target is a stop-gradient copy of S_o; hold it at its value
    // for the unperturbed parameters so the differenced function is the one
    // whose gradient backward computes.
    std::vector<Mat> detached;
    {
        Tape<double> t;
        const Bound<double> b = model.bind(t, false);
        std::mt19937_64 r(0);
        detached.push_back(model.forward(b, t.constant(video_a), lc.eps, 0.0, false, r).original.value());
        detached.push_back(model.forward(b, t.constant(video_b), lc.eps, 0.0, false, r).original.value());
    }
    for (long step : {0L, lc.switch_iter}) {
        check("total loss, step " + std::to_string(step), "model",
              [&, step](Tape<double>& t, const Leaves& params) {
                  std::mt19937_64 r(0);
                  const V xa = t.constant(video_a);
                  const V xb = t.constant(video_b);
                  const std::vector<ModelOutput<double>> outs{model.forward(params, xa, lc.eps, 0.0, false, r),
                                                              model.forward(params, xb, lc.eps, 0.0, false, r)};
                  const std::vector<int> labels{0, 1};
                  return total_loss<double>(outs, labels, step, lc, detached).total;
              },
              param_values, full);
    }
    return entries;
}

}  // namespace savad
