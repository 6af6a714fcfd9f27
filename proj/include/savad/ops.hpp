#pragma once

// Differentiable primitives. Each free function evaluates its forward value
// eagerly and records the adjoint rule on the inputs' tape.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "savad/tape.hpp"

namespace savad {

namespace detail {

inline std::string dims(Eigen::Index r, Eigen::Index c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

template <typename Scalar>
Tape<Scalar>& same_tape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
    if (&a.tape() != &b.tape()) throw UsageError(std::string(op) + ": operands live on different tapes");
    return a.tape();
}

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + dims(a.rows(), a.cols()) + " vs " +
                         dims(b.rows(), b.cols()));
    }
}

// Records which side of zero every element is on.
template <typename Scalar>
void note_signs(Tape<Scalar>& tape, const Matrix<Scalar>& x) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const Scalar v = x.data()[i];
        tape.note_branch(v > Scalar(0) ? 1u : (v < Scalar(0) ? 2u : 3u));
    }
}

}  // namespace detail

/// Offset in time of tap k for a kernel of size K: taps are centred, so for
/// K = 3 the offsets are -d, 0, +d.
constexpr Eigen::Index tap_offset(Eigen::Index k, Eigen::Index kernel_size, Eigen::Index dilation) {
    return (k - (kernel_size - 1) / 2) * dilation;
}

/// Temporal convolution with "same" zero padding.
///   out[t, o] = bias[o] + sum_{k,c} kernel[k*Cin + c, o] * in[t + tap_offset(k), c]
/// `kernel` is (K*Cin) x Cout; `bias`, when given, is 1 x Cout.
template <typename Scalar>
Var<Scalar> conv1d(const Var<Scalar>& input, const Var<Scalar>& kernel, const std::optional<Var<Scalar>>& bias,
                   Eigen::Index dilation) {
    using Mat = Matrix<Scalar>;
    Tape<Scalar>& tape = detail::same_tape(input, kernel, "conv1d");
    if (dilation < 1) throw ParameterError("conv1d: dilation must be >= 1, got " + std::to_string(dilation));
    const Eigen::Index steps = input.rows();
    const Eigen::Index cin = input.cols();
    const Eigen::Index cout = kernel.cols();
    if (cin == 0 || kernel.rows() % cin != 0 || kernel.rows() == 0) {
        throw ShapeError("conv1d: kernel rows " + std::to_string(kernel.rows()) +
                         " are not a multiple of input channels " + std::to_string(cin));
    }
    const Eigen::Index ksize = kernel.rows() / cin;
    if (bias && (bias->rows() != 1 || bias->cols() != cout)) {
        throw ShapeError("conv1d: bias must be 1x" + std::to_string(cout) + ", got " +
                         detail::dims(bias->rows(), bias->cols()));
    }

    // im2col: row t holds the K taps feeding output t, zeros where out of range.
    Mat columns = Mat::Zero(steps, ksize * cin);
    const Mat& x = input.value();
    for (Eigen::Index k = 0; k < ksize; ++k) {
        const Eigen::Index off = tap_offset(k, ksize, dilation);
        const Eigen::Index lo = std::max<Eigen::Index>(0, -off);
        const Eigen::Index hi = std::min<Eigen::Index>(steps, steps - off);
        if (hi > lo) columns.block(lo, k * cin, hi - lo, cin) = x.middleRows(lo + off, hi - lo);
    }
    Mat out(steps, cout);
    out.noalias() = columns * kernel.value();
    if (bias) out.rowwise() += bias->value().row(0);

    const bool rg = input.requires_grad() || kernel.requires_grad() || (bias && bias->requires_grad());
    const std::size_t in_id = input.id();
    const std::size_t k_id = kernel.id();
    const std::optional<std::size_t> b_id = bias ? std::optional<std::size_t>(bias->id()) : std::nullopt;
    return tape.record(std::move(out), rg, "conv1d",
                       [columns = std::move(columns), in_id, k_id, b_id, ksize, cin, dilation, steps](
                           Tape<Scalar>& t, std::size_t self) {
                           const Mat& g = t.adjoint(self);
                           if (t.requires_grad(k_id)) t.accumulate(k_id, columns.transpose() * g);
                           if (b_id && t.requires_grad(*b_id)) t.accumulate(*b_id, g.colwise().sum());
                           if (t.requires_grad(in_id)) {
                               const Mat dcol = g * t.value(k_id).transpose();
                               Mat dx = Mat::Zero(steps, cin);
                               for (Eigen::Index k = 0; k < ksize; ++k) {
                                   const Eigen::Index off = tap_offset(k, ksize, dilation);
                                   const Eigen::Index lo = std::max<Eigen::Index>(0, -off);
                                   const Eigen::Index hi = std::min<Eigen::Index>(steps, steps - off);
                                   if (hi > lo) dx.middleRows(lo + off, hi - lo) += dcol.block(lo, k * cin, hi - lo, cin);
                               }
                               t.accumulate(in_id, dx);
                           }
                       });
}

/// input (T x Cin) * weight (Cin x Cout) + bias (1 x Cout, broadcast over rows).
template <typename Scalar>
Var<Scalar> affine(const Var<Scalar>& input, const Var<Scalar>& weight, const std::optional<Var<Scalar>>& bias) {
    using Mat = Matrix<Scalar>;
    Tape<Scalar>& tape = detail::same_tape(input, weight, "affine");
    if (input.cols() != weight.rows()) {
        throw ShapeError("affine: input " + detail::dims(input.rows(), input.cols()) + " vs weight " +
                         detail::dims(weight.rows(), weight.cols()));
    }
    if (bias && (bias->rows() != 1 || bias->cols() != weight.cols())) {
        throw ShapeError("affine: bias must be 1x" + std::to_string(weight.cols()) + ", got " +
                         detail::dims(bias->rows(), bias->cols()));
    }
    Mat out(input.rows(), weight.cols());
    out.noalias() = input.value() * weight.value();
    if (bias) out.rowwise() += bias->value().row(0);
    const bool rg = input.requires_grad() || weight.requires_grad() || (bias && bias->requires_grad());
    const std::size_t in_id = input.id();
    const std::size_t w_id = weight.id();
    const std::optional<std::size_t> b_id = bias ? std::optional<std::size_t>(bias->id()) : std::nullopt;
    return tape.record(std::move(out), rg, "affine", [in_id, w_id, b_id](Tape<Scalar>& t, std::size_t self) {
        const Mat& g = t.adjoint(self);
        if (t.requires_grad(w_id)) t.accumulate(w_id, t.value(in_id).transpose() * g);
        if (b_id && t.requires_grad(*b_id)) t.accumulate(*b_id, g.colwise().sum());
        if (t.requires_grad(in_id)) t.accumulate(in_id, g * t.value(w_id).transpose());
    });
}

/// a (n x m) * b (m x p).
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
    using Mat = Matrix<Scalar>;
    Tape<Scalar>& tape = detail::same_tape(a, b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + detail::dims(a.rows(), a.cols()) + " * " + detail::dims(b.rows(), b.cols()));
    }
    Mat out(a.rows(), b.cols());
    out.noalias() = a.value() * b.value();
    const std::size_t a_id = a.id();
    const std::size_t b_id = b.id();
    return tape.record(std::move(out), a.requires_grad() || b.requires_grad(), "matmul",
                       [a_id, b_id](Tape<Scalar>& t, std::size_t self) {
                           const Mat& g = t.adjoint(self);
                           if (t.requires_grad(a_id)) t.accumulate(a_id, g * t.value(b_id).transpose());
                           if (t.requires_grad(b_id)) t.accumulate(b_id, t.value(a_id).transpose() * g);
                       });
}

/// a (n x m) * b^T where b is (p x m).
template <typename Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b) {
    using Mat = Matrix<Scalar>;
    Tape<Scalar>& tape = detail::same_tape(a, b, "matmul_nt");
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: " + detail::dims(a.rows(), a.cols()) + " * (" +
                         detail::dims(b.rows(), b.cols()) + ")^T");
    }
    Mat out(a.rows(), b.rows());
    out.noalias() = a.value() * b.value().transpose();
    const std::size_t a_id = a.id();
    const std::size_t b_id = b.id();
    return tape.record(std::move(out), a.requires_grad() || b.requires_grad(), "matmul_nt",
                       [a_id, b_id](Tape<Scalar>& t, std::size_t self) {
                           const Mat& g = t.adjoint(self);
                           if (t.requires_grad(a_id)) t.accumulate(a_id, g * t.value(b_id));
                           if (t.requires_grad(b_id)) t.accumulate(b_id, g.transpose() * t.value(a_id));
                       });
}

namespace detail {

// Elementwise map with derivative expressed through input x and output y.
template <typename Scalar, typename Fwd, typename Deriv>
Var<Scalar> unary(const Var<Scalar>& x, const char* op, Fwd fwd, Deriv deriv) {
    using Mat = Matrix<Scalar>;
    Mat out = x.value().unaryExpr(fwd);
    const std::size_t x_id = x.id();
    return x.tape().record(std::move(out), x.requires_grad(), op, [x_id, deriv](Tape<Scalar>& t, std::size_t self) {
        const Mat& xv = t.value(x_id);
        const Mat& yv = t.value(self);
        Mat d = xv.binaryExpr(yv, deriv);
        t.accumulate(x_id, t.adjoint(self).cwiseProduct(d));
    });
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
    detail::note_signs(x.tape(), x.value());
    return detail::unary(
        x, "relu", [](Scalar v) { return v > Scalar(0) ? v : Scalar(0); },
        [](Scalar v, Scalar) { return v > Scalar(0) ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& x, Scalar slope) {
    detail::note_signs(x.tape(), x.value());
    return detail::unary(
        x, "leaky_relu", [slope](Scalar v) { return v > Scalar(0) ? v : slope * v; },
        [slope](Scalar v, Scalar) { return v > Scalar(0) ? Scalar(1) : slope; });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
    // branch on sign so exp never overflows
    return detail::unary(
        x, "sigmoid",
        [](Scalar v) {
            if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
            const Scalar e = std::exp(v);
            return e / (Scalar(1) + e);
        },
        [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& x) {
    return detail::unary(
        x, "square", [](Scalar v) { return v * v; }, [](Scalar v, Scalar) { return Scalar(2) * v; });
}

/// Row-wise softmax; each row of the result sums to one.
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& x) {
    using Mat = Matrix<Scalar>;
    const Mat& xv = x.value();
    Mat out(xv.rows(), xv.cols());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        const Scalar m = xv.row(r).maxCoeff();
        out.row(r) = (xv.row(r).array() - m).exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    const std::size_t x_id = x.id();
    return x.tape().record(std::move(out), x.requires_grad(), "softmax_rows", [x_id](Tape<Scalar>& t, std::size_t self) {
        const Mat& y = t.value(self);
        const Mat& g = t.adjoint(self);
        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = g.cwiseProduct(y).rowwise().sum();
        Mat dx = y.cwiseProduct(g.colwise() - dots);
        t.accumulate(x_id, dx);
    });
}

/// Inverted dropout: survivors are scaled by 1/(1-rate) so inference is the identity.
template <typename Scalar, typename Rng>
Var<Scalar> dropout(const Var<Scalar>& x, double rate, bool training, Rng& rng) {
    using Mat = Matrix<Scalar>;
    if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - rate);
    const Scalar scale = Scalar(1.0 / (1.0 - rate));
    Mat mask(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : Scalar(0);
    Mat out = x.value().cwiseProduct(mask);
    const std::size_t x_id = x.id();
    return x.tape().record(std::move(out), x.requires_grad(), "dropout",
                           [x_id, mask = std::move(mask)](Tape<Scalar>& t, std::size_t self) {
                               t.accumulate(x_id, t.adjoint(self).cwiseProduct(mask));
                           });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
    using Mat = Matrix<Scalar>;
    Tape<Scalar>& tape = detail::same_tape(a, b, "add");
    detail::require_same_shape(a, b, "add");
    Mat out = a.value() + b.value();
    const std::size_t a_id = a.id();
    const std::size_t b_id = b.id();
    return tape.record(std::move(out), a.requires_grad() || b.requires_grad(), "add",
                       [a_id, b_id](Tape<Scalar>& t, std::size_t self) {
                           const Mat& g = t.adjoint(self);
                           t.accumulate(a_id, g);
                           t.accumulate(b_id, g);
                       });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
    using Mat = Matrix<Scalar>;
    Tape<Scalar>& tape = detail::same_tape(a, b, "sub");
    detail::require_same_shape(a, b, "sub");
    Mat out = a.value() - b.value();
    const std::size_t a_id = a.id();
    const std::size_t b_id = b.id();
    return tape.record(std::move(out), a.requires_grad() || b.requires_grad(), "sub",
                       [a_id, b_id](Tape<Scalar>& t, std::size_t self) {
                           const Mat& g = t.adjoint(self);
                           t.accumulate(a_id, g);
                           t.accumulate(b_id, -g);
                       });
}

/// Hadamard product.
template <typename Scalar>
Var<Scalar> elementwise_mul(const Var<Scalar>& a, const Var<Scalar>& b) {
    using Mat = Matrix<Scalar>;
    Tape<Scalar>& tape = detail::same_tape(a, b, "elementwise_mul");
    detail::require_same_shape(a, b, "elementwise_mul");
    Mat out = a.value().cwiseProduct(b.value());
    const std::size_t a_id = a.id();
    const std::size_t b_id = b.id();
    return tape.record(std::move(out), a.requires_grad() || b.requires_grad(), "elementwise_mul",
                       [a_id, b_id](Tape<Scalar>& t, std::size_t self) {
                           const Mat& g = t.adjoint(self);
                           if (t.requires_grad(a_id)) t.accumulate(a_id, g.cwiseProduct(t.value(b_id)));
                           if (t.requires_grad(b_id)) t.accumulate(b_id, g.cwiseProduct(t.value(a_id)));
                       });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar c) {
    using Mat = Matrix<Scalar>;
    Mat out = x.value() * c;
    const std::size_t x_id = x.id();
    return x.tape().record(std::move(out), x.requires_grad(), "scale",
                           [x_id, c](Tape<Scalar>& t, std::size_t self) { t.accumulate(x_id, t.adjoint(self) * c); });
}

/// Horizontal concatenation along channels; all parts must share the time length.
template <typename Scalar>
Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& parts) {
    using Mat = Matrix<Scalar>;
    if (parts.empty()) throw UsageError("concat_channels: no inputs");
    Tape<Scalar>& tape = parts.front().tape();
    const Eigen::Index steps = parts.front().rows();
    Eigen::Index total = 0;
    bool rg = false;
    std::vector<std::size_t> ids;
    std::vector<Eigen::Index> widths;
    for (const auto& p : parts) {
        if (&p.tape() != &tape) throw UsageError("concat_channels: operands live on different tapes");
        if (p.rows() != steps) {
            throw ShapeError("concat_channels: time length " + std::to_string(p.rows()) + " != " +
                             std::to_string(steps));
        }
        total += p.cols();
        rg = rg || p.requires_grad();
        ids.push_back(p.id());
        widths.push_back(p.cols());
    }
    Mat out(steps, total);
    Eigen::Index col = 0;
    for (const auto& p : parts) {
        out.middleCols(col, p.cols()) = p.value();
        col += p.cols();
    }
    return tape.record(std::move(out), rg, "concat_channels", [ids, widths](Tape<Scalar>& t, std::size_t self) {
        const Mat& g = t.adjoint(self);
        Eigen::Index c = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (t.requires_grad(ids[i])) t.accumulate(ids[i], g.middleCols(c, widths[i]));
            c += widths[i];
        }
    });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
    using Mat = Matrix<Scalar>;
    Mat out = Mat::Constant(1, 1, x.value().sum());
    const std::size_t x_id = x.id();
    const Eigen::Index r = x.rows();
    const Eigen::Index c = x.cols();
    return x.tape().record(std::move(out), x.requires_grad(), "sum", [x_id, r, c](Tape<Scalar>& t, std::size_t self) {
        t.accumulate(x_id, Mat::Constant(r, c, t.adjoint(self)(0, 0)));
    });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
    if (x.value().size() == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(x), Scalar(1) / Scalar(x.value().size()));
}

/// Sum of absolute values (L1 norm). Subgradient 0 at 0.
template <typename Scalar>
Var<Scalar> abs_sum(const Var<Scalar>& x) {
    using Mat = Matrix<Scalar>;
    Mat out = Mat::Constant(1, 1, x.value().cwiseAbs().sum());
    detail::note_signs(x.tape(), x.value());
    const std::size_t x_id = x.id();
    return x.tape().record(std::move(out), x.requires_grad(), "abs_sum", [x_id](Tape<Scalar>& t, std::size_t self) {
        const Scalar g = t.adjoint(self)(0, 0);
        Mat d = t.value(x_id).unaryExpr([g](Scalar v) {
            return v > Scalar(0) ? g : (v < Scalar(0) ? -g : Scalar(0));
        });
        t.accumulate(x_id, d);
    });
}

/// Row differences x[j] - x[j+1]; result has one row fewer than x.
template <typename Scalar>
Var<Scalar> diff_rows(const Var<Scalar>& x) {
    using Mat = Matrix<Scalar>;
    if (x.rows() < 2) throw ShapeError("diff_rows: need at least two rows, got " + std::to_string(x.rows()));
    const Eigen::Index n = x.rows() - 1;
    Mat out = x.value().topRows(n) - x.value().bottomRows(n);
    const std::size_t x_id = x.id();
    const Eigen::Index rows = x.rows();
    const Eigen::Index cols = x.cols();
    return x.tape().record(std::move(out), x.requires_grad(), "diff_rows",
                           [x_id, n, rows, cols](Tape<Scalar>& t, std::size_t self) {
                               const Mat& g = t.adjoint(self);
                               Mat d = Mat::Zero(rows, cols);
                               d.topRows(n) += g;
                               d.bottomRows(n) -= g;
                               t.accumulate(x_id, d);
                           });
}

/// Indices of the k largest entries of a column, ties resolved toward the lower index.
template <typename Scalar>
std::vector<Eigen::Index> topk_indices(const Matrix<Scalar>& column, Eigen::Index k) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(column.size()));
    std::iota(idx.begin(), idx.end(), Eigen::Index(0));
    std::stable_sort(idx.begin(), idx.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return column.data()[a] > column.data()[b]; });
    idx.resize(static_cast<std::size_t>(std::min<Eigen::Index>(k, column.size())));
    return idx;
}

/// Mean of the k largest entries (all entries of x, read in storage order).
template <typename Scalar>
Var<Scalar> topk_mean(const Var<Scalar>& x, Eigen::Index k) {
    using Mat = Matrix<Scalar>;
    if (k < 1 || k > x.value().size()) {
        throw ParameterError("topk_mean: k=" + std::to_string(k) + " outside [1, " + std::to_string(x.value().size()) + "]");
    }
    std::vector<Eigen::Index> idx = topk_indices<Scalar>(x.value(), k);
    for (Eigen::Index i : idx) x.tape().note_branch(static_cast<std::uint64_t>(i));
    Scalar acc(0);
    for (Eigen::Index i : idx) acc += x.value().data()[i];
    Mat out = Mat::Constant(1, 1, acc / Scalar(k));
    const std::size_t x_id = x.id();
    const Eigen::Index r = x.rows();
    const Eigen::Index c = x.cols();
    return x.tape().record(std::move(out), x.requires_grad(), "topk_mean",
                           [x_id, r, c, k, idx = std::move(idx)](Tape<Scalar>& t, std::size_t self) {
                               Mat d = Mat::Zero(r, c);
                               const Scalar g = t.adjoint(self)(0, 0) / Scalar(k);
                               for (Eigen::Index i : idx) d.data()[i] = g;
                               t.accumulate(x_id, d);
                           });
}

/// Binary cross-entropy of a 1x1 probability against a {0,1} target. The
/// probability is clamped to [clamp, 1 - clamp]; the gradient is zero where
/// the clamp is active.
template <typename Scalar>
Var<Scalar> binary_cross_entropy(const Var<Scalar>& prob, double target, double clamp = 1e-7) {
    using Mat = Matrix<Scalar>;
    const double p = static_cast<double>(prob.item());
    const double pc = std::clamp(p, clamp, 1.0 - clamp);
    const bool clamped = pc != p;
    prob.tape().note_branch(clamped ? 5u : 4u);
    const double loss = -(target * std::log(pc) + (1.0 - target) * std::log(1.0 - pc));
    const double deriv = clamped ? 0.0 : (-target / pc + (1.0 - target) / (1.0 - pc));
    const std::size_t p_id = prob.id();
    return prob.tape().record(Mat::Constant(1, 1, Scalar(loss)), prob.requires_grad(), "bce",
                              [p_id, deriv](Tape<Scalar>& t, std::size_t self) {
                                  t.accumulate(p_id, Mat::Constant(1, 1, t.adjoint(self)(0, 0) * Scalar(deriv)));
                              });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
    return add(a, b);
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
    return sub(a, b);
}

template <typename Scalar>
Var<Scalar> operator*(Scalar c, const Var<Scalar>& x) {
    return scale(x, c);
}

}  // namespace savad
