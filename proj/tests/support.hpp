#pragma once

// Shared helpers for the test binaries: random data and loop-based reference
// implementations that do not touch the tape engine.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "savad/ops.hpp"

namespace savad::testing {

using Mat = Matrix<double>;

inline Mat random_mat(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

// Kernel as a plain K x Cin x Cout array, kernel[k][c][o].
using Kernel3 = std::vector<std::vector<std::vector<double>>>;

inline Kernel3 random_kernel(std::mt19937_64& rng, int K, int cin, int cout) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Kernel3 w(K, std::vector<std::vector<double>>(cin, std::vector<double>(cout)));
    for (auto& a : w)
        for (auto& b : a)
            for (auto& v : b) v = u(rng);
    return w;
}

// Packs kernel[k][c][o] into the engine's (K*Cin) x Cout layout.
inline Mat pack_kernel(const Kernel3& w) {
    const int K = static_cast<int>(w.size());
    const int cin = static_cast<int>(w[0].size());
    const int cout = static_cast<int>(w[0][0].size());
    Mat m(K * cin, cout);
    for (int k = 0; k < K; ++k)
        for (int c = 0; c < cin; ++c)
            for (int o = 0; o < cout; ++o) m(k * cin + c, o) = w[k][c][o];
    return m;
}

// out[t,o] = b[o] + sum_{k=1..K, c} w[k,c,o] * x[t + (k - ceil(K/2)) * d, c], zero outside [0, T).
inline Mat conv_oracle(const Mat& x, const Kernel3& w, const std::vector<double>& bias, int d) {
    const int T = static_cast<int>(x.rows());
    const int K = static_cast<int>(w.size());
    const int cin = static_cast<int>(x.cols());
    const int cout = static_cast<int>(w[0][0].size());
    const int half = (K + 1) / 2;  // ceil(K/2)
    Mat out(T, cout);
    for (int t = 0; t < T; ++t) {
        for (int o = 0; o < cout; ++o) {
            double acc = bias.empty() ? 0.0 : bias[o];
            for (int k = 1; k <= K; ++k) {
                const int src = t + (k - half) * d;
                if (src < 0 || src >= T) continue;
                for (int c = 0; c < cin; ++c) acc += w[k - 1][c][o] * x(src, c);
            }
            out(t, o) = acc;
        }
    }
    return out;
}

inline Mat matmul_oracle(const Mat& a, const Mat& b) {
    Mat out(a.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (Eigen::Index k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    }
    return out;
}

inline Mat affine_oracle(const Mat& x, const Mat& w, const Mat& b) {
    Mat out = matmul_oracle(x, w);
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) += b(0, j);
    return out;
}

inline Mat unpacked_conv(const Mat& x, const Mat& packed, const Mat& bias, int K, int d) {
    const int cin = static_cast<int>(packed.rows()) / K;
    Kernel3 w(K, std::vector<std::vector<double>>(cin, std::vector<double>(packed.cols())));
    for (int k = 0; k < K; ++k)
        for (int c = 0; c < cin; ++c)
            for (Eigen::Index o = 0; o < packed.cols(); ++o) w[k][c][o] = packed(k * cin + c, o);
    std::vector<double> b(bias.data(), bias.data() + bias.size());
    return conv_oracle(x, w, b, d);
}

// softmax(Q K^T) V with explicit loops over query time, key time and channel.
inline Mat nonlocal_oracle(const Mat& q, const Mat& k, const Mat& v) {
    const Eigen::Index T = q.rows();
    Mat out = Mat::Zero(T, v.cols());
    for (Eigen::Index i = 0; i < T; ++i) {
        std::vector<double> logits(T);
        for (Eigen::Index j = 0; j < T; ++j) {
            double s = 0.0;
            for (Eigen::Index c = 0; c < q.cols(); ++c) s += q(i, c) * k(j, c);
            logits[j] = s;
        }
        const double m = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double& l : logits) z += (l = std::exp(l - m));
        for (Eigen::Index j = 0; j < T; ++j)
            for (Eigen::Index c = 0; c < v.cols(); ++c) out(i, c) += logits[j] / z * v(j, c);
    }
    return out;
}

inline double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("savad_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace savad::testing
