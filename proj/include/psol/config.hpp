#pragma once

#include "psol/boxreg.hpp"
#include "psol/pseudoboxes.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>

namespace psol {

/// Everything a CLI run needs. Relative paths resolve against the directory
/// of the config file.
struct RunConfig {
    std::filesystem::path manifest;
    std::filesystem::path feature_dir;
    std::filesystem::path pooled_features;
    std::optional<std::filesystem::path> classifier_weights;
    std::optional<std::filesystem::path> pseudo_boxes;
    std::filesystem::path output_dir = "out";
    BoxMethod method = BoxMethod::ddt;
    Split split = Split::train;       // images that receive pseudo boxes
    Split eval_split = Split::test;   // images predicted and evaluated
    double cam_threshold = 0.2;
    std::optional<int> num_classes;
    int threads = 1;
    TrainConfig train;
    /// Set when the config names lr_policy; classifier commands otherwise
    /// default to step decay.
    std::optional<LrPolicy> explicit_lr_policy;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys are an error.
void from_json(const nlohmann::json& j, TrainConfig& cfg);

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

} // namespace psol
