#pragma once

// Independent reference computations for tests. None of these call into the
// code paths they check.

#include "psol/box.hpp"
#include "psol/tensor_io.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace psol::oracle {

struct DensePca {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    Eigen::VectorXd top_vector;
    double top_value = 0;
};

/// Two-pass centred covariance, then a dense self-adjoint eigensolver.
DensePca dense_pca(const std::vector<Eigen::VectorXd>& descriptors);

/// H(i,j) = sum_k (G(i,j,k) - mean_k) * p_k by explicit loops; pass a zero
/// mean for the CAM form.
Eigen::MatrixXd loop_projection(const FeatureMap& fm, const Eigen::VectorXd& mean, const Eigen::VectorXd& p);

/// Bilinear resampling written directly from sample coordinates.
Eigen::MatrixXd loop_bilinear(const Eigen::MatrixXd& in, int out_rows, int out_cols);

/// Labels every 8-connected component of {v > 0} by depth-first flood fill
/// and returns the tight box of the largest one (ties: earliest raster seed).
std::optional<BoxXYWH> flood_fill_box(const Eigen::MatrixXd& hm);

/// IoU of integer-coordinate boxes by counting unit cells.
double raster_iou(const BoxXYWH& a, const BoxXYWH& b);

} // namespace psol::oracle
