#pragma once

// Model checkpoint: a PSOLTNSR file with records "W1", "b1", "W2", "b2"
// (regressor) and/or "Wc", "bc" (classifier), each stored as rows x cols x 1,
// plus a JSON sidecar "<path>.json" holding dims, config, seed and epoch.

#include "psol/boxreg.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace psol {

struct Checkpoint {
    std::optional<RegressorParamsd> reg;
    std::optional<ClassifierParamsd> cls;
    TrainConfig config;
    int epoch = 0;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws FormatError on missing/inconsistent records. The sidecar is optional
/// on read; without it the config holds defaults.
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

} // namespace psol
