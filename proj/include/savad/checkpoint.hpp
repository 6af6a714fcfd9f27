#pragma once

// Model checkpoint file:
//   "SAVD" | u32 version | repeated { u16 name_len | name (UTF-8) | u8 rank |
//   u32 extents[rank] | f32 values[prod(extents)] }
// All integers and floats little-endian, values row-major.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "savad/parameters.hpp"

namespace savad {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
    std::string name;
    std::vector<std::uint32_t> extents;
    std::vector<float> values;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);

template <typename Scalar>
std::vector<NamedArray> to_arrays(const ParameterSet<Scalar>& params) {
    std::vector<NamedArray> arrays;
    for (const auto& p : params) {
        NamedArray a{p.name, p.extents, {}};
        a.values.resize(static_cast<std::size_t>(p.value.size()));
        for (Eigen::Index i = 0; i < p.value.size(); ++i) a.values[static_cast<std::size_t>(i)] = static_cast<float>(p.value.data()[i]);
        arrays.push_back(std::move(a));
    }
    return arrays;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<Scalar>& params) {
    write_checkpoint(path, to_arrays(params));
}

/// Loads values into an already-configured parameter set. Every parameter
/// must be present with matching extents, and no extra entries are allowed.
template <typename Scalar>
void load_checkpoint(const std::filesystem::path& path, ParameterSet<Scalar>& params) {
    const std::vector<NamedArray> arrays = read_checkpoint(path);
    if (arrays.size() != params.size()) {
        throw ConfigError(path.string() + ": checkpoint holds " + std::to_string(arrays.size()) +
                          " parameters, architecture expects " + std::to_string(params.size()));
    }
    for (const auto& a : arrays) {
        const std::size_t i = params.index_of(a.name);
        Parameter<Scalar>& p = params[i];
        if (a.extents != p.extents) throw ConfigError(path.string() + ": shape mismatch for " + a.name);
        for (std::size_t k = 0; k < a.values.size(); ++k) p.value.data()[k] = static_cast<Scalar>(a.values[k]);
    }
}

}  // namespace savad
