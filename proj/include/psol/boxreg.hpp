#pragma once

// Class-agnostic box regression head, linear softmax classifier head, and the
// SGD machinery shared by both. Features arrive as columns (d x n).

#include "psol/box.hpp"
#include "psol/error.hpp"

#include <Eigen/Core>

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace psol {

enum class LrPolicy { fixed, step_decay };

struct TrainConfig {
    double lr = 0.001;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    int batch_size = 256;
    int epochs = 30;
    LrPolicy lr_policy = LrPolicy::fixed;
    int step_every = 10;       // step_decay: epochs between decays
    double step_factor = 0.1;  // step_decay: multiplier per decay
    double lr_mult = 1.0;      // multiplier for the randomly initialised heads
    int hidden = 512;
    double lambda = 1.0;       // joint loss: CE + lambda * reg
    std::uint64_t seed = 0;

    /// Rate for a 0-based epoch under the configured policy.
    double lr_at(int epoch) const
    {
        double rate = lr * lr_mult;
        if (lr_policy == LrPolicy::step_decay && step_every > 0)
            rate *= std::pow(step_factor, epoch / step_every);
        return rate;
    }
};

const char* to_string(LrPolicy p);
LrPolicy lr_policy_from_string(const std::string& s);

/// Rates for a single update.
struct SgdRates {
    double lr = 0.001;
    double momentum = 0.9;
    double weight_decay = 0.0005;
};

// ------------------------------------------------------------- parameters

template <typename Scalar>
struct RegressorParams {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Matrix W1; // m x d
    Vector b1; // m
    Matrix W2; // 4 x m
    Vector b2; // 4
    Matrix mW1, mW2;
    Vector mb1, mb2;

    RegressorParams() = default;
    RegressorParams(int input_dim, int hidden)
        : W1(Matrix::Zero(hidden, input_dim)), b1(Vector::Zero(hidden)), W2(Matrix::Zero(4, hidden)),
          b2(Vector::Zero(4)), mW1(Matrix::Zero(hidden, input_dim)), mW2(Matrix::Zero(4, hidden)),
          mb1(Vector::Zero(hidden)), mb2(Vector::Zero(4))
    {
    }

    int input_dim() const { return int(W1.cols()); }
    int hidden() const { return int(W1.rows()); }

    /// Visits (parameter, momentum buffer) pairs in a fixed order.
    template <typename F>
    void for_each(F&& f)
    {
        f(W1, mW1);
        f(b1, mb1);
        f(W2, mW2);
        f(b2, mb2);
    }

    template <typename To>
    RegressorParams<To> cast() const
    {
        RegressorParams<To> o;
        o.W1 = W1.template cast<To>();
        o.b1 = b1.template cast<To>();
        o.W2 = W2.template cast<To>();
        o.b2 = b2.template cast<To>();
        o.mW1 = mW1.template cast<To>();
        o.mb1 = mb1.template cast<To>();
        o.mW2 = mW2.template cast<To>();
        o.mb2 = mb2.template cast<To>();
        return o;
    }
};

template <typename Scalar>
struct RegressorGrads {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> W1, W2;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> b1, b2;

    template <typename F>
    void for_each(F&& f) const
    {
        f(W1);
        f(b1);
        f(W2);
        f(b2);
    }
};

template <typename Scalar>
struct ClassifierParams {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Matrix Wc; // C x d
    Vector bc; // C
    Matrix mWc;
    Vector mbc;

    ClassifierParams() = default;
    ClassifierParams(int input_dim, int classes)
        : Wc(Matrix::Zero(classes, input_dim)), bc(Vector::Zero(classes)),
          mWc(Matrix::Zero(classes, input_dim)), mbc(Vector::Zero(classes))
    {
    }

    int input_dim() const { return int(Wc.cols()); }
    int classes() const { return int(Wc.rows()); }

    template <typename F>
    void for_each(F&& f)
    {
        f(Wc, mWc);
        f(bc, mbc);
    }

    template <typename To>
    ClassifierParams<To> cast() const
    {
        ClassifierParams<To> o;
        o.Wc = Wc.template cast<To>();
        o.bc = bc.template cast<To>();
        o.mWc = mWc.template cast<To>();
        o.mbc = mbc.template cast<To>();
        return o;
    }
};

template <typename Scalar>
struct ClassifierGrads {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> Wc;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> bc;

    template <typename F>
    void for_each(F&& f) const
    {
        f(Wc);
        f(bc);
    }
};

using RegressorParamsd = RegressorParams<double>;
using ClassifierParamsd = ClassifierParams<double>;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer; buffers zeroed.
template <typename Scalar, typename Rng>
RegressorParams<Scalar> init_regressor(int input_dim, int hidden, Rng& rng)
{
    RegressorParams<Scalar> p(input_dim, hidden);
    const auto fill = [&](auto& m, int fan_in) {
        std::uniform_real_distribution<double> u(-1.0 / std::sqrt(double(fan_in)), 1.0 / std::sqrt(double(fan_in)));
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                m(i, j) = Scalar(u(rng));
    };
    fill(p.W1, input_dim);
    fill(p.b1, input_dim);
    fill(p.W2, hidden);
    fill(p.b2, hidden);
    return p;
}

template <typename Scalar, typename Rng>
ClassifierParams<Scalar> init_classifier(int input_dim, int classes, Rng& rng)
{
    ClassifierParams<Scalar> p(input_dim, classes);
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(double(input_dim)), 1.0 / std::sqrt(double(input_dim)));
    for (Eigen::Index j = 0; j < p.Wc.cols(); ++j)
        for (Eigen::Index i = 0; i < p.Wc.rows(); ++i)
            p.Wc(i, j) = Scalar(u(rng));
    for (Eigen::Index i = 0; i < p.bc.size(); ++i)
        p.bc[i] = Scalar(u(rng));
    return p;
}

// ------------------------------------------------------------ regression

template <typename Scalar>
using BoxMatrix = Eigen::Matrix<Scalar, 4, Eigen::Dynamic>;

inline Eigen::Vector4d to_vector(const NormalizedBox& b) { return {b.x, b.y, b.w, b.h}; }

template <typename Derived>
NormalizedBox to_box(const Eigen::MatrixBase<Derived>& v)
{
    return {double(v(0)), double(v(1)), double(v(2)), double(v(3))};
}

/// Intermediate activations of a forward pass over a batch.
template <typename Scalar>
struct RegressorTrace {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> z1; // m x n pre-activation
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> a1; // m x n relu
    BoxMatrix<Scalar> out;                                     // 4 x n sigmoid
};

template <typename Scalar>
void check_input(const RegressorParams<Scalar>& params, Eigen::Index rows)
{
    if (rows != params.W1.cols())
        throw DimensionError("regressor expects " + std::to_string(params.W1.cols()) + "-dim features, got " +
                             std::to_string(rows));
}

/// sigmoid(W2 relu(W1 X + b1) + b2), one column per sample.
template <typename Scalar, typename Derived>
RegressorTrace<Scalar> reg_forward_trace(const RegressorParams<Scalar>& params, const Eigen::MatrixBase<Derived>& x)
{
    check_input(params, x.rows());
    RegressorTrace<Scalar> t;
    t.z1 = (params.W1 * x).colwise() + params.b1;
    t.a1 = t.z1.cwiseMax(Scalar(0));
    const BoxMatrix<Scalar> z2 = (params.W2 * t.a1).colwise() + params.b2;
    t.out = (Scalar(1) + (-z2.array()).exp()).inverse().matrix();
    return t;
}

template <typename Scalar, typename Derived>
BoxMatrix<Scalar> reg_forward(const RegressorParams<Scalar>& params, const Eigen::MatrixBase<Derived>& x)
{
    return reg_forward_trace(params, x).out;
}

/// Single-sample form.
template <typename Scalar>
NormalizedBox reg_forward(const RegressorParams<Scalar>& params, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& v)
{
    return to_box(reg_forward_trace(params, v).out.col(0));
}

/// Mean over the four coordinates of squared differences.
inline double reg_loss(const NormalizedBox& pred, const NormalizedBox& target)
{
    return (to_vector(pred) - to_vector(target)).squaredNorm() / 4.0;
}

/// Batch loss: mean over samples of reg_loss.
template <typename Scalar>
Scalar reg_loss(const BoxMatrix<Scalar>& pred, const BoxMatrix<Scalar>& target)
{
    return (pred - target).squaredNorm() / Scalar(4 * pred.cols());
}

/// Exact gradients of the batch loss; ReLU'(0) = 0.
template <typename Scalar, typename Derived>
RegressorGrads<Scalar> reg_backward(const RegressorParams<Scalar>& params, const Eigen::MatrixBase<Derived>& x,
                                    const BoxMatrix<Scalar>& target, const RegressorTrace<Scalar>& trace,
                                    Scalar loss_weight = Scalar(1))
{
    const auto n = x.cols();
    const Scalar scale = loss_weight * Scalar(2) / Scalar(4 * n);
    const BoxMatrix<Scalar> dz2 =
        (scale * (trace.out - target).array() * trace.out.array() * (Scalar(1) - trace.out.array())).matrix();
    RegressorGrads<Scalar> g;
    g.W2.noalias() = dz2 * trace.a1.transpose();
    g.b2 = dz2.rowwise().sum();
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> dz1 = params.W2.transpose() * dz2;
    dz1 = (trace.z1.array() > Scalar(0)).select(dz1, Scalar(0));
    g.W1.noalias() = dz1 * x.transpose();
    g.b1 = dz1.rowwise().sum();
    return g;
}

template <typename Scalar, typename Derived>
RegressorGrads<Scalar> reg_backward(const RegressorParams<Scalar>& params, const Eigen::MatrixBase<Derived>& x,
                                    const BoxMatrix<Scalar>& target)
{
    return reg_backward(params, x, target, reg_forward_trace(params, x));
}

// -------------------------------------------------------- classification

template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> cls_logits(const ClassifierParams<Scalar>& params,
                                                                 const Eigen::MatrixBase<Derived>& x)
{
    if (x.rows() != params.Wc.cols())
        throw DimensionError("classifier expects " + std::to_string(params.Wc.cols()) + "-dim features, got " +
                             std::to_string(x.rows()));
    return (params.Wc * x).colwise() + params.bc;
}

/// Column-wise softmax, max-shifted.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> softmax(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& logits)
{
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> p =
        (logits.rowwise() - logits.colwise().maxCoeff()).array().exp().matrix();
    p.array().rowwise() /= p.colwise().sum().array();
    return p;
}

/// Mean cross-entropy of the batch.
template <typename Scalar>
Scalar cls_loss(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& logits, const std::vector<int>& labels)
{
    Scalar total = 0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        const Scalar mx = logits.col(j).maxCoeff();
        const Scalar lse = mx + std::log((logits.col(j).array() - mx).exp().sum());
        total += lse - logits(labels[std::size_t(j)], j);
    }
    return total / Scalar(logits.cols());
}

template <typename Scalar, typename Derived>
ClassifierGrads<Scalar> cls_backward(const ClassifierParams<Scalar>& params, const Eigen::MatrixBase<Derived>& x,
                                     const std::vector<int>& labels)
{
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> d = softmax<Scalar>(cls_logits(params, x));
    for (Eigen::Index j = 0; j < d.cols(); ++j)
        d(labels[std::size_t(j)], j) -= Scalar(1);
    d /= Scalar(x.cols());
    ClassifierGrads<Scalar> g;
    g.Wc.noalias() = d * x.transpose();
    g.bc = d.rowwise().sum();
    return g;
}

// -------------------------------------------------------------------- SGD

/// buf <- momentum * buf + grad + weight_decay * param; param <- param - lr * buf.
/// Decay applies to weights and biases alike.
template <typename P, typename B, typename G>
void sgd_update(Eigen::MatrixBase<P>& param, Eigen::MatrixBase<B>& buf, const Eigen::MatrixBase<G>& grad,
                const SgdRates& rates)
{
    using S = typename P::Scalar;
    if (grad.rows() != param.rows() || grad.cols() != param.cols())
        throw DimensionError("sgd_step: gradient shape does not match parameter shape");
    buf = S(rates.momentum) * buf + grad + S(rates.weight_decay) * param;
    param -= S(rates.lr) * buf;
}

template <typename Scalar>
void sgd_step(RegressorParams<Scalar>& p, const RegressorGrads<Scalar>& g, const SgdRates& rates)
{
    sgd_update(p.W1, p.mW1, g.W1, rates);
    sgd_update(p.b1, p.mb1, g.b1, rates);
    sgd_update(p.W2, p.mW2, g.W2, rates);
    sgd_update(p.b2, p.mb2, g.b2, rates);
}

template <typename Scalar>
void sgd_step(ClassifierParams<Scalar>& p, const ClassifierGrads<Scalar>& g, const SgdRates& rates)
{
    sgd_update(p.Wc, p.mWc, g.Wc, rates);
    sgd_update(p.bc, p.mbc, g.bc, rates);
}

} // namespace psol
