#include "psol/ddt.hpp"

#include "psol/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace psol {

CovarianceAccumulator::CovarianceAccumulator(int d)
    : sum_x_(Eigen::VectorXd::Zero(d)), sum_xxT_(Eigen::MatrixXd::Zero(d, d))
{
    if (d <= 0)
        throw DimensionError("accumulator depth must be positive");
}

void CovarianceAccumulator::add(const FeatureMap& fm)
{
    if (fm.d != dim())
        throw DimensionError("accumulate: feature map '" + fm.image_id + "' has depth " + std::to_string(fm.d) +
                             ", accumulator has " + std::to_string(dim()));
    add_rows(fm.values);
}

void CovarianceAccumulator::merge(const CovarianceAccumulator& other)
{
    if (other.dim() != dim())
        throw DimensionError("merge: accumulator depths differ");
    n_pos_ += other.n_pos_;
    sum_x_ += other.sum_x_;
    sum_xxT_ += other.sum_xxT_;
}

CovarianceAccumulator accumulate(CovarianceAccumulator acc, const FeatureMap& fm)
{
    acc.add(fm);
    return acc;
}

CovarianceAccumulator merge(CovarianceAccumulator a, const CovarianceAccumulator& b)
{
    a.merge(b);
    return a;
}

SymmetricEigen jacobi_eigen(Eigen::MatrixXd a, int max_sweeps)
{
    const Eigen::Index n = a.rows();
    if (a.cols() != n)
        throw DimensionError("jacobi_eigen: matrix must be square");
    SymmetricEigen out;
    out.vectors = Eigen::MatrixXd::Identity(n, n);

    const double frob2 = a.squaredNorm();
    const double floor2 = frob2 * 1e-36;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0;
        for (Eigen::Index q = 1; q < n; ++q)
            off += a.col(q).head(q).squaredNorm();
        if (off == 0 || off <= floor2)
            break;
        out.sweeps = sweep + 1;

        for (Eigen::Index p = 0; p + 1 < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0)
                    continue;
                const double app = a(p, p);
                const double aqq = a(q, q);
                const double g = 100.0 * std::abs(apq);
                // Once the element is below rounding of both diagonal
                // entries it can be dropped without changing them.
                if (sweep > 3 && std::abs(app) + g == std::abs(app) && std::abs(aqq) + g == std::abs(aqq)) {
                    a(p, q) = a(q, p) = 0;
                    continue;
                }
                const double theta = (aqq - app) / (2.0 * apq);
                double t;
                if (std::abs(theta) > 1e150)
                    t = 0.5 / theta;
                else
                    t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                // A <- J^T A J with J = [[c, s], [-s, c]] on (p, q).
                const Eigen::VectorXd cp = a.col(p);
                a.col(p) = c * cp - s * a.col(q);
                a.col(q) = s * cp + c * a.col(q);
                const Eigen::RowVectorXd rp = a.row(p);
                a.row(p) = c * rp - s * a.row(q);
                a.row(q) = s * rp + c * a.row(q);
                a(p, q) = a(q, p) = 0;

                const Eigen::VectorXd vp = out.vectors.col(p);
                out.vectors.col(p) = c * vp - s * out.vectors.col(q);
                out.vectors.col(q) = s * vp + c * out.vectors.col(q);
            }
        }
    }
    out.values = a.diagonal();
    return out;
}

Eigen::MatrixXd covariance(const CovarianceAccumulator& acc)
{
    if (acc.n_pos() < 2)
        throw DataError("principal_direction: need at least 2 positions, have " + std::to_string(acc.n_pos()));
    const double n = double(acc.n_pos());
    const Eigen::VectorXd mean = acc.sum_x() / n;
    Eigen::MatrixXd cov = acc.sum_xxT() / n - mean * mean.transpose();
    if (!cov.allFinite())
        throw NumericError("principal_direction: non-finite covariance");
    const double scale = std::max(1.0, (acc.sum_xxT() / n).cwiseAbs().maxCoeff());
    const double asym = (cov - cov.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-8 * scale)
        throw NumericError("principal_direction: covariance is not symmetric (max asymmetry " +
                           std::to_string(asym) + ")");
    return 0.5 * (cov + cov.transpose());
}

PrincipalDirection principal_direction(const CovarianceAccumulator& acc)
{
    const Eigen::MatrixXd cov = covariance(acc);
    const SymmetricEigen eig = jacobi_eigen(cov);

    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < eig.values.size(); ++i) {
        if (eig.values[i] > eig.values[best])
            best = i;
    }

    PrincipalDirection pd;
    pd.mean = acc.sum_x() / double(acc.n_pos());
    pd.p = eig.vectors.col(best).normalized();
    pd.eigenvalue = std::max(0.0, eig.values[best]);

    Eigen::Index lead = 0;
    for (Eigen::Index i = 1; i < pd.p.size(); ++i) {
        if (std::abs(pd.p[i]) > std::abs(pd.p[lead]))
            lead = i;
    }
    if (pd.p[lead] < 0)
        pd.p = -pd.p;
    return pd;
}

namespace {

Eigen::VectorXd centred_projection(const FeatureMap& fm, const PrincipalDirection& pd)
{
    if (fm.d != pd.p.size())
        throw DimensionError("feature map '" + fm.image_id + "' depth " + std::to_string(fm.d) +
                             " does not match principal direction length " + std::to_string(pd.p.size()));
    const double offset = pd.mean.dot(pd.p);
    Eigen::VectorXd proj = fm.values.cast<double>() * pd.p;
    proj.array() -= offset;
    return proj;
}

HeatMap to_grid(const Eigen::VectorXd& positions, int rows, int cols)
{
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const RowMajor>(positions.data(), rows, cols);
}

} // namespace

long long count_positive(const PrincipalDirection& pd, std::span<const FeatureMap> maps)
{
    long long positive = 0;
    for (const auto& fm : maps)
        positive += (centred_projection(fm, pd).array() > 0).count();
    return positive;
}

bool orient_direction(PrincipalDirection& pd, std::span<const FeatureMap> maps)
{
    long long total = 0;
    for (const auto& fm : maps)
        total += fm.positions();
    const long long positive = count_positive(pd, maps);
    if (2 * positive > total) {
        pd.p = -pd.p;
        return true;
    }
    return false;
}

HeatMap project_heatmap(const FeatureMap& fm, const PrincipalDirection& pd)
{
    return to_grid(centred_projection(fm, pd), fm.h, fm.w);
}

HeatMap cam_heatmap(const FeatureMap& fm, const ClassifierWeights& weights, int class_idx)
{
    if (weights.cols() != fm.d)
        throw DimensionError("cam_heatmap: classifier weight depth " + std::to_string(weights.cols()) +
                             " does not match feature depth " + std::to_string(fm.d));
    if (class_idx < 0 || class_idx >= weights.rows())
        throw DimensionError("cam_heatmap: class index " + std::to_string(class_idx) + " out of range");
    const Eigen::VectorXd wk = weights.row(class_idx).transpose().cast<double>();
    const Eigen::VectorXd proj = fm.values.cast<double>() * wk;
    return to_grid(proj, fm.h, fm.w);
}

namespace {

struct Tap {
    Eigen::Index lo;
    Eigen::Index hi;
    double frac;
};

std::vector<Tap> corner_aligned_taps(Eigen::Index in, int out)
{
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const double scale = out > 1 ? double(in - 1) / double(out - 1) : 0.0;
    for (int i = 0; i < out; ++i) {
        const double src = i * scale;
        auto lo = std::min<Eigen::Index>(Eigen::Index(std::floor(src)), in - 1);
        const auto hi = std::min<Eigen::Index>(lo + 1, in - 1);
        taps[std::size_t(i)] = {lo, hi, src - double(lo)};
    }
    return taps;
}

} // namespace

HeatMap upsample_bilinear(const HeatMap& hm, int out_rows, int out_cols)
{
    if (out_rows < 1 || out_cols < 1)
        throw DimensionError("upsample_bilinear: output dimensions must be >= 1");
    if (hm.rows() < 1 || hm.cols() < 1)
        throw DimensionError("upsample_bilinear: empty input");
    const auto rt = corner_aligned_taps(hm.rows(), out_rows);
    const auto ct = corner_aligned_taps(hm.cols(), out_cols);

    HeatMap out(out_rows, out_cols);
    for (int j = 0; j < out_cols; ++j) {
        const auto& c = ct[std::size_t(j)];
        for (int i = 0; i < out_rows; ++i) {
            const auto& r = rt[std::size_t(i)];
            const double a = hm(r.lo, c.lo), b = hm(r.lo, c.hi);
            const double e = hm(r.hi, c.lo), f = hm(r.hi, c.hi);
            const double top = a + c.frac * (b - a);
            const double bottom = e + c.frac * (f - e);
            out(i, j) = top + r.frac * (bottom - top);
        }
    }
    return out;
}

std::optional<BoxXYWH> extract_box(const HeatMap& hm)
{
    const Eigen::Index rows = hm.rows(), cols = hm.cols();
    std::vector<int> label(std::size_t(rows * cols), -1);
    std::vector<Eigen::Index> queue;

    struct Component {
        long long count = 0;
        Eigen::Index r0, r1, c0, c1;
    };
    std::optional<Component> best;

    const auto idx = [cols](Eigen::Index r, Eigen::Index c) { return std::size_t(r * cols + c); };
    int next_label = 0;
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            if (!(hm(r, c) > 0) || label[idx(r, c)] >= 0)
                continue;
            // Seeds are visited in raster order, so the first seed of a
            // component is its raster-first pixel.
            Component comp{0, r, r, c, c};
            label[idx(r, c)] = next_label;
            queue.assign(1, r * cols + c);
            for (std::size_t head = 0; head < queue.size(); ++head) {
                const Eigen::Index pr = queue[head] / cols, pc = queue[head] % cols;
                ++comp.count;
                comp.r0 = std::min(comp.r0, pr);
                comp.r1 = std::max(comp.r1, pr);
                comp.c0 = std::min(comp.c0, pc);
                comp.c1 = std::max(comp.c1, pc);
                for (Eigen::Index dr = -1; dr <= 1; ++dr) {
                    for (Eigen::Index dc = -1; dc <= 1; ++dc) {
                        const Eigen::Index nr = pr + dr, nc = pc + dc;
                        if (nr < 0 || nr >= rows || nc < 0 || nc >= cols)
                            continue;
                        if (label[idx(nr, nc)] >= 0 || !(hm(nr, nc) > 0))
                            continue;
                        label[idx(nr, nc)] = next_label;
                        queue.push_back(nr * cols + nc);
                    }
                }
            }
            ++next_label;
            if (!best || comp.count > best->count)
                best = comp;
        }
    }
    if (!best)
        return std::nullopt;
    return BoxXYWH{double(best->c0), double(best->r0), double(best->c1 - best->c0 + 1),
                   double(best->r1 - best->r0 + 1)};
}

} // namespace psol
