#pragma once

#include "psol/boxreg.hpp"
#include "psol/pseudoboxes.hpp"
#include "psol/tensor_io.hpp"

#include <span>
#include <string>
#include <vector>

namespace psol {

struct RegressorRun {
    RegressorParamsd params;
    std::vector<double> loss; // mean training loss per epoch
};

struct ClassifierRun {
    ClassifierParamsd params;
    std::vector<double> loss;
};

struct JointRun {
    RegressorParamsd reg;
    ClassifierParamsd cls;
    std::vector<double> loss;     // cross-entropy + lambda * reg loss
    std::vector<double> cls_loss;
    std::vector<double> reg_loss;
};

/// Seeded initial parameters; trainers start from exactly these.
RegressorParamsd initial_regressor(int input_dim, const TrainConfig& cfg);
ClassifierParamsd initial_classifier(int input_dim, int classes, const TrainConfig& cfg);

/// Mini-batch SGD on the l2 box loss. `x` is d x n, `targets` 4 x n normalized boxes.
RegressorRun train_regressor(const Eigen::MatrixXd& x, const BoxMatrix<double>& targets, const TrainConfig& cfg);

/// Softmax cross-entropy on a linear head.
ClassifierRun train_classifier(const Eigen::MatrixXd& x, const std::vector<int>& labels, int classes,
                               const TrainConfig& cfg);

/// Both heads on the same batches; the regressor gradient is scaled by cfg.lambda.
JointRun train_joint(const Eigen::MatrixXd& x, const std::vector<int>& labels, int classes,
                     const BoxMatrix<double>& targets, const TrainConfig& cfg);

/// Training set assembled from files: every annotation's image must have a
/// pooled feature; boxes are normalized by the image's original size.
struct RegressionSet {
    std::vector<std::string> ids;
    Eigen::MatrixXd x;
    BoxMatrix<double> targets;
};
RegressionSet regression_set(const PooledFeatures& pooled, std::span<const PseudoAnnotation> anns,
                             const Manifest& manifest);

struct ClassificationSet {
    std::vector<std::string> ids;
    Eigen::MatrixXd x;
    std::vector<int> labels;
};
ClassificationSet classification_set(const PooledFeatures& pooled, const Manifest& manifest, Split split);

RegressorRun train_regressor(const PooledFeatures& pooled, std::span<const PseudoAnnotation> anns,
                             const Manifest& manifest, const TrainConfig& cfg);
ClassifierRun train_classifier(const PooledFeatures& pooled, const Manifest& manifest, int classes,
                               const TrainConfig& cfg);
JointRun train_joint(const PooledFeatures& pooled, std::span<const PseudoAnnotation> anns,
                     const Manifest& manifest, int classes, const TrainConfig& cfg);

struct PredictedBox {
    std::string image_id;
    BoxXYWH box;
};

/// One box per image of `split`, in manifest order, in original pixels.
std::vector<PredictedBox> predict_boxes(const RegressorParamsd& params, const PooledFeatures& pooled,
                                        const Manifest& manifest, Split split = Split::test);

/// Softmax scores per image of `split`, in manifest order.
std::vector<ClassifierOutputs> classify(const ClassifierParamsd& params, const PooledFeatures& pooled,
                                        const Manifest& manifest, Split split = Split::test);

void write_predictions(std::span<const PredictedBox> preds, const std::filesystem::path& path);
std::vector<PredictedBox> read_predictions(const std::filesystem::path& path);

/// CSV with header "epoch,split,loss"; epochs are 1-based.
void write_loss_csv(std::span<const double> loss, const std::filesystem::path& path);

} // namespace psol
