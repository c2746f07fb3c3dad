#pragma once

#include "psol/box.hpp"
#include "psol/boxreg.hpp"
#include "psol/tensor_io.hpp"
#include "psol/train.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace psol {

inline constexpr double kGtKnownIou = 0.5;

/// IoU of 0.5 or more.
bool gt_known(const BoxXYWH& pred, const BoxXYWH& gt);

/// 1-based rank of `label` in `scores`; equal scores rank the lower index first.
int class_rank(const Eigen::VectorXf& scores, int label);

bool top1_correct(const Eigen::VectorXf& scores, int gt_label, const BoxXYWH& pred, const BoxXYWH& gt);
bool top5_correct(const Eigen::VectorXf& scores, int gt_label, const BoxXYWH& pred, const BoxXYWH& gt);

struct ImageVerdict {
    std::string image_id;
    double iou = 0;
    std::optional<int> gt_rank; // absent without classifier outputs
    bool gt_known = false;
    bool top1 = false;
    bool top5 = false;
};

struct EvalReport {
    std::size_t n = 0;               // images scored
    std::size_t skipped_no_gt = 0;   // images of the split without a gt box
    double gt_known_loc = 0;
    std::optional<double> top1_loc;
    std::optional<double> top5_loc;
    std::optional<double> top1_cls;
    std::optional<double> top5_cls;
    std::vector<ImageVerdict> verdicts; // manifest order
};

/// Scores every image of `split` that has a gt box. Every such image needs a
/// prediction (and scores, when given); ids absent from the manifest are errors.
EvalReport evaluate_run(std::span<const PredictedBox> predictions,
                        const std::vector<ClassifierOutputs>* scores, const Manifest& manifest,
                        Split split = Split::test);

std::uint64_t params_checksum(const RegressorParamsd& params);

/// Predicts with frozen parameters on another dataset and reports GT-Known
/// only. Throws DimensionError when the feature depth differs.
EvalReport transfer_eval(const RegressorParamsd& params, const PooledFeatures& pooled, const Manifest& manifest,
                         Split split = Split::test);

std::string report_json(const EvalReport& report);
std::string report_table(const EvalReport& report);
void write_verdicts_csv(const EvalReport& report, std::ostream& out);

} // namespace psol
