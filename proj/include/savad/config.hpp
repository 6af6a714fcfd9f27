#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "savad/data.hpp"
#include "savad/evaluate.hpp"
#include "savad/trainer.hpp"

namespace savad {

/// Everything a CLI run can be configured with. Missing JSON keys keep the defaults.
struct RunConfig {
    TrainConfig train;
    SynthConfig synth;
    EvalOptions eval;
};

RunConfig default_run_config();
nlohmann::ordered_json to_json(const RunConfig& cfg);
/// Applies the keys present in `j` on top of `cfg`; unknown keys are rejected.
void apply_json(RunConfig& cfg, const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace savad
