#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "savad/grad_check.hpp"

namespace savad {

struct SuiteEntry {
    std::string name;
    std::string group;  // "primitive", "layer" or "model"
    CheckReport report;
};

struct SuiteOptions {
    std::uint64_t seed = 0;
    Eigen::Index steps = 12;       // T of the random videos
    Eigen::Index feature_dim = 16;  // D
    double primitive_tol = 1e-5;
    double model_tol = 1e-4;
    // coordinates sampled per parameter tensor in the full-model check
    std::size_t model_coords = 24;
};

/// Finite-difference checks (64-bit, dropout off) of every primitive, the
/// composite blocks, and the total loss w.r.t. every parameter tensor.
std::vector<SuiteEntry> run_gradcheck_suite(const SuiteOptions& options = {});

}  // namespace savad
