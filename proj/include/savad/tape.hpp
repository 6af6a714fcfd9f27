#pragma once

// Reverse-mode differentiation over dense row-major Eigen matrices.
//
// A Tape owns every value produced while evaluating a program. Each primitive
// appends one node holding its forward value and a closure that pushes the
// node's adjoint back onto its inputs. Tape::backward replays those closures
// in reverse recording order, so every operation is visited exactly once.
//
// Values are 2-D (rows = time, cols = channels). Convolution kernels with
// extents K x Cin x Cout are stored as (K*Cin) x Cout matrices, tap-major.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "savad/errors.hpp"

namespace savad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
public:
    Var() = default;
    Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

    [[nodiscard]] bool valid() const { return tape_ != nullptr; }
    [[nodiscard]] Tape<Scalar>& tape() const { return *tape_; }
    [[nodiscard]] std::size_t id() const { return id_; }

    [[nodiscard]] const Matrix<Scalar>& value() const { return tape_->value(id_); }
    [[nodiscard]] Matrix<Scalar> grad() const { return tape_->gradient(id_); }
    [[nodiscard]] bool requires_grad() const { return tape_->requires_grad(id_); }
    [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
    [[nodiscard]] Eigen::Index cols() const { return value().cols(); }

    /// Value of a 1x1 node.
    [[nodiscard]] Scalar item() const {
        if (rows() != 1 || cols() != 1) {
            throw ShapeError("item() on a " + std::to_string(rows()) + "x" + std::to_string(cols()) +
                             " tensor");
        }
        return value()(0, 0);
    }

private:
    Tape<Scalar>* tape_ = nullptr;
    std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
public:
    using Mat = Matrix<Scalar>;
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<Scalar> leaf(Mat value, bool requires_grad = true) {
        return push(std::move(value), requires_grad, "leaf", nullptr);
    }

    Var<Scalar> constant(Mat value) { return push(std::move(value), false, "constant", nullptr); }

    /// Appends the result of a primitive. `backward` receives the tape and the
    /// node id; it reads adjoint(id) and calls accumulate() on its inputs.
    Var<Scalar> record(Mat value, bool requires_grad, const char* op, BackwardFn backward) {
        return push(std::move(value), requires_grad, op, requires_grad ? std::move(backward) : nullptr);
    }

    [[nodiscard]] const Mat& value(std::size_t id) const { return nodes_.at(id).value; }
    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    [[nodiscard]] const char* op_name(std::size_t id) const { return nodes_.at(id).op; }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

    /// Accumulated adjoint; zeros when nothing reached the node.
    [[nodiscard]] Mat gradient(std::size_t id) const {
        const Node& n = nodes_.at(id);
        if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    /// Adjoint of a node during backward. Empty if no adjoint has arrived.
    [[nodiscard]] const Mat& adjoint(std::size_t id) const { return nodes_[id].grad; }

    template <typename Derived>
    void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    /// Seeds d(root)/d(root) = 1 and propagates adjoints to every node.
    void backward(const Var<Scalar>& root) {
        if (&root.tape() != this) throw UsageError("backward: root belongs to another tape");
        const Mat& v = value(root.id());
        if (v.rows() != 1 || v.cols() != 1) {
            throw UsageError("backward: root must be scalar, got " + std::to_string(v.rows()) + "x" +
                             std::to_string(v.cols()));
        }
        zero_grad();
        visit_order_.clear();
        if (!requires_grad(root.id())) return;
        nodes_[root.id()].grad = Mat::Constant(1, 1, Scalar(1));
        for (std::size_t i = root.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.backward) continue;
            visit_order_.push_back(i);
            if (n.grad.size() == 0) continue;
            n.backward(*this, i);
        }
    }

    void zero_grad() {
        for (Node& n : nodes_) n.grad.resize(0, 0);
    }

    /// Folds a discrete choice made by a non-smooth op (active ReLU units,
    /// top-k picks, clamps, masks) into a running hash. Two evaluations with
    /// equal signatures took the same piecewise-smooth branch.
    void note_branch(std::uint64_t choice) { signature_ = (signature_ ^ choice) * 0x100000001b3ull; }
    [[nodiscard]] std::uint64_t branch_signature() const { return signature_; }

    /// Node ids whose backward closure ran during the last backward() call.
    [[nodiscard]] const std::vector<std::size_t>& last_backward_order() const { return visit_order_; }

private:
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad = false;
        const char* op = "";
        BackwardFn backward;
    };

    Var<Scalar> push(Mat value, bool requires_grad, const char* op, BackwardFn backward) {
        // deque keeps references to existing nodes stable across push_back
        nodes_.push_back(Node{std::move(value), Mat(), requires_grad, op, std::move(backward)});
        return Var<Scalar>(this, nodes_.size() - 1);
    }

    std::deque<Node> nodes_;
    std::vector<std::size_t> visit_order_;
    std::uint64_t signature_ = 0xcbf29ce484222325ull;
};

}  // namespace savad
