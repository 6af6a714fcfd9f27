#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "savad/ops.hpp"
#include "savad/parameters.hpp"

namespace savad {

/// Temporal convolution with its own kernel/bias slots.
struct ConvLayer {
    std::size_t weight = 0;
    std::optional<std::size_t> bias;
    Eigen::Index dilation = 1;

    template <typename Scalar>
    static ConvLayer create(ParameterSet<Scalar>& params, const std::string& name, Eigen::Index in, Eigen::Index out,
                            Eigen::Index kernel_size, Eigen::Index dilation, bool with_bias = true) {
        ConvLayer layer;
        layer.weight = params.add(name + ".weight", {static_cast<std::uint32_t>(kernel_size),
                                                     static_cast<std::uint32_t>(in), static_cast<std::uint32_t>(out)});
        if (with_bias) layer.bias = params.add(name + ".bias", {static_cast<std::uint32_t>(out)});
        layer.dilation = dilation;
        return layer;
    }

    template <typename Scalar>
    Var<Scalar> operator()(const Bound<Scalar>& bound, const Var<Scalar>& x) const {
        std::optional<Var<Scalar>> b;
        if (bias) b = bound[*bias];
        return conv1d(x, bound[weight], b, dilation);
    }
};

/// Dense layer applied independently to every time step.
struct AffineLayer {
    std::size_t weight = 0;
    std::size_t bias = 0;

    template <typename Scalar>
    static AffineLayer create(ParameterSet<Scalar>& params, const std::string& name, Eigen::Index in,
                              Eigen::Index out) {
        AffineLayer layer;
        layer.weight = params.add(name + ".weight", {static_cast<std::uint32_t>(in), static_cast<std::uint32_t>(out)});
        layer.bias = params.add(name + ".bias", {static_cast<std::uint32_t>(out)});
        return layer;
    }

    template <typename Scalar>
    Var<Scalar> operator()(const Bound<Scalar>& bound, const Var<Scalar>& x) const {
        return affine(x, bound[weight], std::optional<Var<Scalar>>(bound[bias]));
    }
};

/// Global temporal branch: embedded-Gaussian self-attention over time.
///   out = softmax_rows(Q K^T) V,  Q, K, V = 1x1 convolutions D -> D/4.
/// No scaling of the logits and no residual inside the block.
struct NonLocalBlock {
    ConvLayer query;
    ConvLayer key;
    ConvLayer value;
    std::optional<ConvLayer> output;

    template <typename Scalar>
    static NonLocalBlock create(ParameterSet<Scalar>& params, const std::string& name, Eigen::Index channels,
                                bool output_projection = false) {
        if (channels <= 0 || channels % 4 != 0) {
            throw ConfigError("non-local block: channel count " + std::to_string(channels) + " is not divisible by 4");
        }
        const Eigen::Index inner = channels / 4;
        NonLocalBlock block;
        block.query = ConvLayer::create(params, name + ".query", channels, inner, 1, 1);
        block.key = ConvLayer::create(params, name + ".key", channels, inner, 1, 1);
        block.value = ConvLayer::create(params, name + ".value", channels, inner, 1, 1);
        if (output_projection) block.output = ConvLayer::create(params, name + ".output", inner, inner, 1, 1);
        return block;
    }

    /// Row-stochastic T x T attention weights.
    template <typename Scalar>
    Var<Scalar> weights(const Bound<Scalar>& bound, const Var<Scalar>& features) const {
        return softmax_rows(matmul_nt(query(bound, features), key(bound, features)));
    }

    template <typename Scalar>
    Var<Scalar> operator()(const Bound<Scalar>& bound, const Var<Scalar>& features) const {
        Var<Scalar> out = matmul(weights(bound, features), value(bound, features));
        if (output) out = (*output)(bound, out);
        return out;
    }
};

/// Local temporal branch: three kernel-3 convolutions with dilations 1, 2, 4,
/// each D -> D/4, with independent parameters.
struct DilatedBranch {
    static constexpr std::array<Eigen::Index, 3> kDilations{1, 2, 4};
    std::array<ConvLayer, 3> convs;

    template <typename Scalar>
    static DilatedBranch create(ParameterSet<Scalar>& params, const std::string& name, Eigen::Index channels,
                                Eigen::Index kernel_size = 3) {
        if (channels <= 0 || channels % 4 != 0) {
            throw ConfigError("dilated branch: channel count " + std::to_string(channels) + " is not divisible by 4");
        }
        DilatedBranch branch;
        for (std::size_t i = 0; i < kDilations.size(); ++i) {
            branch.convs[i] = ConvLayer::create(params, name + ".dilation" + std::to_string(kDilations[i]), channels,
                                                channels / 4, kernel_size, kDilations[i]);
        }
        return branch;
    }

    template <typename Scalar>
    std::array<Var<Scalar>, 3> operator()(const Bound<Scalar>& bound, const Var<Scalar>& features) const {
        return {convs[0](bound, features), convs[1](bound, features), convs[2](bound, features)};
    }
};

}  // namespace savad
