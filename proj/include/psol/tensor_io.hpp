#pragma once

// On-disk formats shared with the feature exporter:
//
//   PSOLTNSR  binary tensor file (little-endian):
//     char[8] "PSOLTNSR" | u32 version = 1 | u32 record count
//     per record: u16 id length | id bytes (UTF-8) | u32 h | u32 w | u32 d |
//                 h*w*d float32, row-major with the channel index fastest
//   manifest  JSON lines, one ImageRecord per line
//   scores    JSON lines {"image_id": ..., "scores": [...]}

#include "psol/box.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace psol {

inline constexpr char kTensorMagic[8] = {'P', 'S', 'O', 'L', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kTensorVersion = 1;

/// Spatial positions as rows (row index = i * w + j), channels as columns.
using DescriptorMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One image's h x w x d activation grid. Also the generic PSOLTNSR record.
struct FeatureMap {
    std::string image_id;
    int h = 0;
    int w = 0;
    int d = 0;
    DescriptorMatrix values; // (h*w) x d

    FeatureMap() = default;
    FeatureMap(std::string id, int rows, int cols, int depth);

    int positions() const { return h * w; }
    float& at(int i, int j, int k) { return values(i * w + j, k); }
    float at(int i, int j, int k) const { return values(i * w + j, k); }
};

/// Throws ValidationError if any value is NaN/Inf or the shape is inconsistent.
void validate(const FeatureMap& fm);

void write_tensor_file(std::span<const FeatureMap> records, const std::filesystem::path& path);
std::vector<FeatureMap> read_tensor_file(const std::filesystem::path& path);

// Stream forms, used by the file functions and by tests.
void write_tensors(std::span<const FeatureMap> records, std::ostream& out);
std::vector<FeatureMap> read_tensors(std::istream& in);

enum class Split { train, test };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct ImageRecord {
    std::string image_id;
    int class_label = 0;
    int orig_width = 0;
    int orig_height = 0;
    int net_input_size = 0;
    std::optional<BoxXYWH> gt_box;
    Split split = Split::train;
};

/// Checks the ImageRecord invariants; throws ValidationError.
void validate(const ImageRecord& rec);

/// Ordered manifest with an id index.
class Manifest {
public:
    Manifest() = default;
    explicit Manifest(std::vector<ImageRecord> records);

    const std::vector<ImageRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    const ImageRecord* find(const std::string& image_id) const;
    const ImageRecord& at(const std::string& image_id) const;

    std::vector<const ImageRecord*> split(Split s) const;
    /// One past the largest class label.
    int num_classes() const;

private:
    std::vector<ImageRecord> records_;
    std::unordered_map<std::string, std::size_t> index_;
};

Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::istream& in);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct ClassifierOutputs {
    std::string image_id;
    Eigen::VectorXf scores;
};

std::vector<ClassifierOutputs> read_classifier_outputs(const std::filesystem::path& path);
void write_classifier_outputs(std::span<const ClassifierOutputs> outputs,
                              const std::filesystem::path& path);

/// C x d matrix, one row per class.
using ClassifierWeights = Eigen::MatrixXf;

/// Stored as a single 1 x C x d record.
ClassifierWeights read_classifier_weights(const std::filesystem::path& path);
void write_classifier_weights(const ClassifierWeights& w, const std::filesystem::path& path);

/// Globally pooled features, one column per image.
class PooledFeatures {
public:
    PooledFeatures() = default;
    PooledFeatures(std::vector<std::string> ids, Eigen::MatrixXf values);

    int dim() const { return static_cast<int>(values_.rows()); }
    std::size_t size() const { return ids_.size(); }
    const std::vector<std::string>& ids() const { return ids_; }
    const Eigen::MatrixXf& values() const { return values_; }
    std::optional<Eigen::Index> find(const std::string& id) const;

    /// Columns for the given ids as a d x n double matrix. Throws DataError on a
    /// missing id.
    Eigen::MatrixXd gather(std::span<const std::string> ids) const;

private:
    std::vector<std::string> ids_;
    Eigen::MatrixXf values_;
    std::unordered_map<std::string, Eigen::Index> index_;
};

/// Pooled features are a PSOLTNSR file of 1 x 1 x d records.
PooledFeatures read_pooled_features(const std::filesystem::path& path);
void write_pooled_features(const PooledFeatures& pf, const std::filesystem::path& path);

/// Location of the per-class feature file: <dir>/<split>/class_<label>.psoltnsr
std::filesystem::path class_feature_path(const std::filesystem::path& dir, Split split, int label);

} // namespace psol
