#include "savad/trainer.hpp"

#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace savad {

std::string log_line(long iteration, const LossBreakdown& b) {
    nlohmann::ordered_json j;
    j["iteration"] = iteration;
    j["guide_branch"] = b.guide_hard ? "binarized" : "scores";
    j["L_c_o"] = b.c_o;
    j["L_c_a"] = b.c_a;
    j["L_c_so"] = b.c_so;
    j["L_c_sa"] = b.c_sa;
    j["L_c_all"] = b.c_all;
    j["L_guide_neg"] = b.guide_neg;
    j["L_guide_pos"] = b.guide_pos;
    j["L_norm"] = b.norm;
    j["L_sm"] = b.sm;
    j["L_sp"] = b.sp;
    j["total"] = b.total;
    return j.dump();
}

Model<float> train_to_dir(const Manifest& manifest, const TrainConfig& cfg, const std::filesystem::path& out_dir) {
    const std::vector<Video> videos = load_videos(manifest);
    if (videos.empty()) throw DataError("training manifest is empty");
    TrainConfig resolved = cfg;
    resolved.model.feature_dim = videos.front().features.cols();
    resolved.validate();

    Model<float> model = Model<float>::create(resolved.model, resolved.seed);
    std::filesystem::create_directories(out_dir / "checkpoints");
    const std::filesystem::path log_path = out_dir / "train_log.jsonl";
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw DataError(log_path.string() + ": cannot open for writing");

    TrainHooks hooks;
    hooks.on_step = [&](long it, const LossBreakdown& b) { log << log_line(it, b) << '\n'; };
    hooks.on_checkpoint = [&](long done, bool final) {
        char name[32];
        std::snprintf(name, sizeof(name), "iter_%06ld.savd", done);
        save_checkpoint(out_dir / "checkpoints" / name, model.params());
        if (final) save_checkpoint(out_dir / "model.savd", model.params());
        log.flush();
    };
    train(model, videos, resolved, hooks);
    if (!log) throw DataError(log_path.string() + ": write failed");
    return model;
}

}  // namespace savad
