#pragma once

#include "psol/box.hpp"
#include "psol/ddt.hpp"
#include "psol/tensor_io.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace psol {

enum class BoxMethod { ddt, cam };
enum class BoxSource { ddt, cam, fullimage_fallback };

const char* to_string(BoxMethod m);
BoxMethod box_method_from_string(const std::string& s);
const char* to_string(BoxSource s);
BoxSource box_source_from_string(const std::string& s);

struct PseudoAnnotation {
    std::string image_id;
    BoxXYWH box; // original-image pixels
    BoxSource source = BoxSource::ddt;

    friend bool operator==(const PseudoAnnotation&, const PseudoAnnotation&) = default;
};

struct PseudoBoxOptions {
    BoxMethod method = BoxMethod::ddt;
    /// Images that receive boxes. Directions are always fitted on train.
    Split target_split = Split::train;
    /// CAM maps are min-max scaled and thresholded at this fraction.
    double cam_threshold = 0.2;
    int threads = 1;
};

/// Heat map -> upsample to the network input -> largest component -> original
/// pixels. nullopt when no pixel is positive.
std::optional<BoxXYWH> box_from_heatmap(const HeatMap& hm, const ImageRecord& rec);

/// Boxes for one class. `fit_maps` are the class's train maps (used for the
/// DDT direction); `targets` pair each image to box with its feature map.
std::vector<PseudoAnnotation> class_pseudo_boxes(std::span<const FeatureMap> fit_maps,
                                                 std::span<const ImageRecord* const> targets,
                                                 std::span<const FeatureMap* const> target_maps,
                                                 const PseudoBoxOptions& opts,
                                                 const ClassifierWeights* weights = nullptr);

/// Runs every class found in the manifest, reading per-class tensor files from
/// `feature_dir` (see class_feature_path). Output is ordered by (class, image_id)
/// and holds exactly one annotation per target-split image.
std::vector<PseudoAnnotation> generate_pseudo_boxes(const Manifest& manifest,
                                                    const std::filesystem::path& feature_dir,
                                                    const PseudoBoxOptions& opts,
                                                    const ClassifierWeights* weights = nullptr);

void write_pseudo_annotations(std::span<const PseudoAnnotation> anns, const std::filesystem::path& path);
std::vector<PseudoAnnotation> read_pseudo_annotations(const std::filesystem::path& path);

/// Every id must be in the manifest and every box inside its image.
void check_against_manifest(std::span<const PseudoAnnotation> anns, const Manifest& manifest);

} // namespace psol
