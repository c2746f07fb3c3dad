#pragma once

// Deep descriptor transformation: per-class PCA over convolutional
// descriptors, heat-map projection and box extraction.

#include "psol/box.hpp"
#include "psol/error.hpp"
#include "psol/tensor_io.hpp"

#include <Eigen/Core>

#include <optional>
#include <span>

namespace psol {

/// Streaming first and second moments of d-dimensional descriptors, kept in
/// double precision. Accumulators over disjoint data merge by addition.
class CovarianceAccumulator {
public:
    CovarianceAccumulator() = default;
    explicit CovarianceAccumulator(int d);

    /// Adds every spatial descriptor of `fm`. Throws DimensionError on depth mismatch.
    void add(const FeatureMap& fm);
    /// Adds descriptors given as rows.
    template <typename Derived>
    void add_rows(const Eigen::MatrixBase<Derived>& rows);

    void merge(const CovarianceAccumulator& other);

    int dim() const { return static_cast<int>(sum_x_.size()); }
    long long n_pos() const { return n_pos_; }
    const Eigen::VectorXd& sum_x() const { return sum_x_; }
    const Eigen::MatrixXd& sum_xxT() const { return sum_xxT_; }

private:
    long long n_pos_ = 0;
    Eigen::VectorXd sum_x_;
    Eigen::MatrixXd sum_xxT_;
};

template <typename Derived>
void CovarianceAccumulator::add_rows(const Eigen::MatrixBase<Derived>& rows)
{
    if (rows.cols() != sum_x_.size())
        throw DimensionError("accumulate: descriptor depth does not match the accumulator");
    const Eigen::MatrixXd x = rows.template cast<double>();
    sum_x_ += x.colwise().sum().transpose();
    sum_xxT_.noalias() += x.transpose() * x;
    n_pos_ += x.rows();
}

CovarianceAccumulator accumulate(CovarianceAccumulator acc, const FeatureMap& fm);
CovarianceAccumulator merge(CovarianceAccumulator a, const CovarianceAccumulator& b);

/// Mean-centred leading principal axis of one class's descriptors.
struct PrincipalDirection {
    Eigen::VectorXd mean;
    Eigen::VectorXd p; // unit length
    double eigenvalue = 0;
};

/// Eigen-decomposition of a symmetric matrix: eigenvalues unsorted, matching
/// eigenvector columns.
struct SymmetricEigen {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
    int sweeps = 0;
};

/// Cyclic Jacobi rotations until the off-diagonal mass is negligible.
SymmetricEigen jacobi_eigen(Eigen::MatrixXd a, int max_sweeps = 100);

/// Mean, covariance, leading eigenvector. Needs n_pos >= 2; throws DataError
/// otherwise. The sign of p is provisional (largest-magnitude component made
/// positive) until orient_direction() sees the fitting data.
PrincipalDirection principal_direction(const CovarianceAccumulator& acc);

/// Population covariance sum_xxT/n - mean*mean^T, symmetrized.
Eigen::MatrixXd covariance(const CovarianceAccumulator& acc);

/// Number of descriptors in `maps` with a strictly positive centred projection.
long long count_positive(const PrincipalDirection& pd, std::span<const FeatureMap> maps);

/// Flips p so that at most half of the given positions project positively.
/// Returns true when a flip happened.
bool orient_direction(PrincipalDirection& pd, std::span<const FeatureMap> maps);

using HeatMap = Eigen::MatrixXd;

/// H(i,j) = sum_k (G(i,j,k) - mean_k) p_k
HeatMap project_heatmap(const FeatureMap& fm, const PrincipalDirection& pd);

/// Class activation map: H(i,j) = sum_k G(i,j,k) W(class,k), no centring.
HeatMap cam_heatmap(const FeatureMap& fm, const ClassifierWeights& weights, int class_idx);

/// Corner-aligned bilinear resampling.
HeatMap upsample_bilinear(const HeatMap& hm, int out_rows, int out_cols);

/// Tight box around the largest 8-connected component of {value > 0}, in
/// heat-map pixel coordinates (x = column, y = row). Ties go to the component
/// whose first pixel in raster order comes first. Empty mask -> nullopt.
std::optional<BoxXYWH> extract_box(const HeatMap& hm);

} // namespace psol
