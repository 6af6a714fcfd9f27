#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "savad/tape.hpp"

namespace savad {

/// A tensor program: builds a scalar from leaves recorded on the given tape.
template <typename Scalar>
using Program = std::function<Var<Scalar>(Tape<Scalar>&, const std::vector<Var<Scalar>>&)>;

struct InputCheck {
    std::string name;
    double max_rel_error = 0.0;  // after discounting rounding noise; decides pass/fail
    double raw_rel_error = 0.0;  // plain |analytic - numeric| ratio, for reporting
    std::size_t coords_checked = 0;
    // probes that crossed a kink (different branch signature); not compared
    std::size_t coords_skipped = 0;
};

struct CheckReport {
    std::vector<InputCheck> inputs;
    double max_rel_error = 0.0;
    double raw_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

struct GradCheckOptions {
    double eps = 1e-5;
    double tol = 1e-5;
    // 0 checks every coordinate; otherwise a seeded random subset per input.
    std::size_t max_coords = 0;
    std::uint64_t seed = 0;
    // lower bound on the error denominator, for inputs whose true gradient is ~0
    double abs_floor = 1e-7;
    // absolute differences up to roundoff_ulps * machine eps * |f| / eps are
    // rounding noise of the central difference, not gradient error
    double roundoff_ulps = 4.0;
    std::vector<std::string> names;
};

/// Compares reverse-mode gradients against central finite differences.
///
/// The error for one input is the infinity-norm of (analytic - numeric) over
/// the checked coordinates, less the rounding noise of the difference quotient,
/// divided by the larger of the analytic gradient's infinity-norm and the
/// numeric estimates' infinity-norm (at least abs_floor).
///
/// Coordinates whose +/- probes land on a different piecewise-smooth branch
/// than the base point (see Tape::note_branch) are skipped: a difference
/// quotient across a ReLU kink or a top-k swap does not estimate the gradient.
template <typename Scalar>
CheckReport grad_check(const Program<Scalar>& fn, const std::vector<Matrix<Scalar>>& inputs,
                       const GradCheckOptions& options = {}) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].allFinite()) throw UsageError("grad_check: input " + std::to_string(i) + " is not finite");
    }

    struct Probe {
        double value;
        std::uint64_t signature;
    };
    auto evaluate = [&](const std::vector<Matrix<Scalar>>& values) {
        Tape<Scalar> tape;
        std::vector<Var<Scalar>> leaves;
        for (const auto& v : values) leaves.push_back(tape.leaf(v));
        Var<Scalar> out = fn(tape, leaves);
        if (out.rows() != 1 || out.cols() != 1) {
            throw UsageError("grad_check: program must return a scalar, got " + std::to_string(out.rows()) + "x" +
                             std::to_string(out.cols()));
        }
        return Probe{static_cast<double>(out.item()), tape.branch_signature()};
    };
    const Probe base = evaluate(inputs);

    std::vector<Matrix<Scalar>> analytic;
    {
        Tape<Scalar> tape;
        std::vector<Var<Scalar>> leaves;
        for (const auto& v : inputs) leaves.push_back(tape.leaf(v));
        Var<Scalar> out = fn(tape, leaves);
        if (out.rows() != 1 || out.cols() != 1) {
            throw UsageError("grad_check: program must return a scalar, got " + std::to_string(out.rows()) + "x" +
                             std::to_string(out.cols()));
        }
        tape.backward(out);
        for (const auto& leaf : leaves) analytic.push_back(leaf.grad());
    }

    std::mt19937_64 rng(options.seed);
    CheckReport report;
    report.tolerance = options.tol;
    std::vector<Matrix<Scalar>> probe = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Eigen::Index n = inputs[i].size();
        std::vector<Eigen::Index> coords(static_cast<std::size_t>(n));
        std::iota(coords.begin(), coords.end(), Eigen::Index(0));
        if (options.max_coords > 0 && coords.size() > options.max_coords) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.max_coords);
        }
        double worst_diff = 0.0;
        double worst_raw = 0.0;
        double numeric_norm = 0.0;
        std::size_t skipped = 0;
        for (Eigen::Index c : coords) {
            Scalar& slot = probe[i].data()[c];
            const Scalar saved = slot;
            slot = saved + Scalar(options.eps);
            const Probe up = evaluate(probe);
            slot = saved - Scalar(options.eps);
            const Probe down = evaluate(probe);
            slot = saved;
            if (up.signature != base.signature || down.signature != base.signature) {
                ++skipped;
                continue;
            }
            const double numeric = (up.value - down.value) / (2.0 * options.eps);
            const double noise = options.roundoff_ulps * static_cast<double>(std::numeric_limits<Scalar>::epsilon()) *
                                 std::max({std::abs(up.value), std::abs(down.value), 1.0}) / options.eps;
            const double a = static_cast<double>(analytic[i].data()[c]);
            worst_diff = std::max(worst_diff, std::abs(a - numeric) - noise);
            worst_raw = std::max(worst_raw, std::abs(a - numeric));
            numeric_norm = std::max(numeric_norm, std::abs(numeric));
        }
        const double analytic_norm = n > 0 ? static_cast<double>(analytic[i].cwiseAbs().maxCoeff()) : 0.0;
        const double denom = std::max({analytic_norm, numeric_norm, options.abs_floor});
        InputCheck check;
        check.name = i < options.names.size() ? options.names[i] : "input" + std::to_string(i);
        check.max_rel_error = worst_diff / denom;
        check.raw_rel_error = worst_raw / denom;
        check.coords_checked = coords.size() - skipped;
        check.coords_skipped = skipped;
        report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
        report.raw_rel_error = std::max(report.raw_rel_error, check.raw_rel_error);
        report.inputs.push_back(std::move(check));
    }
    // an input whose every probe crossed a kink was not verified at all
    const bool all_probed = std::none_of(report.inputs.begin(), report.inputs.end(),
                                         [](const InputCheck& c) { return c.coords_checked == 0 && c.coords_skipped > 0; });
    report.passed = report.max_rel_error <= options.tol && all_probed;
    return report;
}

}  // namespace savad
