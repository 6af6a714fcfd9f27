#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "savad/tape.hpp"

namespace savad {

/// A named learnable array. `extents` is the logical shape; `value` stores it
/// as a matrix whose column count is the last extent (a K x Cin x Cout kernel
/// becomes (K*Cin) x Cout, a bias of extent {C} becomes 1 x C).
template <typename Scalar>
struct Parameter {
    std::string name;
    std::vector<std::uint32_t> extents;
    Matrix<Scalar> value;

    [[nodiscard]] std::size_t fan_in() const {
        if (extents.size() < 2) return 1;
        return std::accumulate(extents.begin(), extents.end() - 1, std::size_t(1), std::multiplies<>());
    }
    [[nodiscard]] bool is_bias() const { return extents.size() == 1; }
};

template <typename Scalar>
class ParameterSet {
public:
    /// Registers a zero-initialised parameter and returns its slot.
    std::size_t add(std::string name, std::vector<std::uint32_t> extents) {
        if (extents.empty()) throw ConfigError("parameter " + name + " has no extents");
        const Eigen::Index cols = extents.back();
        Eigen::Index rows = 1;
        for (std::size_t i = 0; i + 1 < extents.size(); ++i) rows *= extents[i];
        params_.push_back(Parameter<Scalar>{std::move(name), std::move(extents), Matrix<Scalar>::Zero(rows, cols)});
        return params_.size() - 1;
    }

    [[nodiscard]] std::size_t size() const { return params_.size(); }
    [[nodiscard]] Parameter<Scalar>& operator[](std::size_t i) { return params_[i]; }
    [[nodiscard]] const Parameter<Scalar>& operator[](std::size_t i) const { return params_[i]; }
    [[nodiscard]] auto begin() { return params_.begin(); }
    [[nodiscard]] auto end() { return params_.end(); }
    [[nodiscard]] auto begin() const { return params_.begin(); }
    [[nodiscard]] auto end() const { return params_.end(); }

    [[nodiscard]] std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (params_[i].name == name) return i;
        }
        throw ConfigError("unknown parameter " + name);
    }

    /// Records every parameter as a leaf on `tape`, in slot order.
    std::vector<Var<Scalar>> bind(Tape<Scalar>& tape, bool requires_grad = true) const {
        std::vector<Var<Scalar>> leaves;
        leaves.reserve(params_.size());
        for (const auto& p : params_) leaves.push_back(tape.leaf(p.value, requires_grad));
        return leaves;
    }

    [[nodiscard]] bool all_finite() const {
        for (const auto& p : params_) {
            if (!p.value.allFinite()) return false;
        }
        return true;
    }

    [[nodiscard]] std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
        return n;
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    void initialize(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        for (auto& p : params_) {
            if (p.is_bias()) {
                p.value.setZero();
                continue;
            }
            const double bound = 1.0 / std::sqrt(static_cast<double>(p.fan_in()));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<Scalar>(dist(rng));
        }
    }

    void set_zero() {
        for (auto& p : params_) p.value.setZero();
    }

    template <typename Other>
    [[nodiscard]] ParameterSet<Other> cast() const {
        ParameterSet<Other> out;
        for (const auto& p : params_) {
            const std::size_t i = out.add(p.name, p.extents);
            out[i].value = p.value.template cast<Other>();
        }
        return out;
    }

private:
    std::vector<Parameter<Scalar>> params_;
};

template <typename Scalar>
using Bound = std::vector<Var<Scalar>>;

}  // namespace savad
