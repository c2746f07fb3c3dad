#pragma once

// Seeded synthetic dataset with a planted object per image. Descriptors inside
// the planted rectangle are shifted along a per-class direction against
// isotropic background noise; pooled features embed the object's normalized
// box, so a regressor on them can localize.

#include "psol/box.hpp"
#include "psol/tensor_io.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <unordered_map>
#include <vector>

namespace psol::testing {

struct FixtureOptions {
    std::uint64_t seed = 7;
    int classes = 5;
    int images_per_class = 200;
    double test_fraction = 0.25;
    int d = 64;
    int grid = 28;
    int net_input = 448;
    double noise_sigma = 1.0;
    double shift_sigma = 10.0;  // planted shift, in units of noise_sigma
    double background_offset = 3.0;
    double area_min = 0.15;     // planted area as a fraction of the grid
    double area_max = 0.40;
    double pooled_noise = 0.02;
    double score_margin = 2.5;  // synthetic classifier: true-class bonus
};

struct Fixture {
    FixtureOptions options;
    Manifest manifest;
    std::map<std::pair<Split, int>, std::vector<FeatureMap>> features; // (split, class)
    PooledFeatures pooled;
    std::vector<ClassifierOutputs> scores;
    ClassifierWeights weights;                         // C x d, rows = class directions
    std::unordered_map<std::string, BoxXYWH> planted;  // original-image pixels
    std::unordered_map<std::string, BoxXYWH> planted_grid; // grid cells
};

Fixture make_fixture(const FixtureOptions& opts);

/// Writes manifest.jsonl, features/<split>/class_<c>.psoltnsr, pooled.psoltnsr,
/// scores.jsonl, classifier_weights.psoltnsr and a config.json under `dir`.
void write_fixture(const Fixture& fx, const std::filesystem::path& dir);

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

} // namespace psol::testing
