#ifndef NLA_NAW_HPP
#define NLA_NAW_HPP

// Noise-aware adaptive weighting: a bivariate Gaussian kernel over the
// (ground-truth score, nearest-negative score) pair of each sample, with one
// kernel for correctly predicted samples and one for mispredicted samples.

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "nla/numkit.hpp"

namespace nla {

template <typename Scalar>
struct PredictionPair {
    Scalar p_gt;
    Scalar p_nn;
    bool is_true_prediction;

    Vec2<Scalar> point() const { return Vec2<Scalar>(p_gt, p_nn); }
};

template <typename Scalar>
struct KernelParams {
    Vec2<Scalar> mu;
    Mat2<Scalar> sigma;
    Mat2<Scalar> sigma_inv;
    Scalar norm_const;
};

enum class AxisOrientation { AlongYEqX, AlongYEqNegX };

/// Complete weighting configuration. Defaults are the published settings;
/// `total_epochs` is the scheduler horizon E.
template <typename Scalar>
struct WeightPolicy {
    Vec2<Scalar> mu_true{Scalar(0.5), Scalar(0.5)};
    Vec2<Scalar> mu_false{Scalar(0.3), Scalar(0.15)};
    Scalar sigma_diag = Scalar(0.8);
    Scalar axis_ratio_true = Scalar(2);
    Scalar axis_ratio_false = Scalar(6);
    int total_epochs = 60;

    void validate() const {
        if (!mu_true.allFinite() || !mu_false.allFinite())
            throw std::invalid_argument("WeightPolicy: non-finite mean");
        if (!(sigma_diag > Scalar(0)) || !std::isfinite(sigma_diag))
            throw std::invalid_argument("WeightPolicy: sigma_diag must be positive");
        if (!(axis_ratio_true >= Scalar(1)) || !(axis_ratio_false >= Scalar(1)) ||
            !std::isfinite(axis_ratio_true) || !std::isfinite(axis_ratio_false))
            throw std::invalid_argument("WeightPolicy: axis ratios must be >= 1");
        if (total_epochs < 1)
            throw std::invalid_argument("WeightPolicy: total_epochs must be >= 1");
    }
};

using WeightPolicyd = WeightPolicy<double>;
using KernelParamsd = KernelParams<double>;
using PredictionPaird = PredictionPair<double>;

/// Ground-truth score, nearest-negative score and correctness. Ties count as
/// a true prediction.
template <typename Scalar>
PredictionPair<Scalar> extract_scores(const ProbVector<Scalar>& probs, Eigen::Index label) {
    if (label < 0 || label >= probs.size())
        throw std::invalid_argument("extract_scores: label out of range");
    const Scalar p_gt = probs[label];
    Scalar p_nn = Scalar(-1);
    for (Eigen::Index k = 0; k < probs.size(); ++k)
        if (k != label && probs[k] > p_nn)
            p_nn = probs[k];
    return {p_gt, p_nn, p_gt >= p_nn};
}

/// 1 - exp(-10 e / E).
template <typename Scalar = double>
Scalar covariance_schedule(int epoch, int total_epochs) {
    if (total_epochs <= 0)
        throw std::invalid_argument("covariance_schedule: total_epochs must be positive");
    if (epoch < 0 || epoch > total_epochs)
        throw std::invalid_argument("covariance_schedule: epoch outside [0, E]");
    return -std::expm1(Scalar(-10) * Scalar(epoch) / Scalar(total_epochs));
}

/// Equal-diagonal covariance whose ellipse has major:minor axis length
/// `ratio` with the major axis along the requested diagonal. The eigenvalues
/// are diag +- |b|, so |b| = diag (r^2 - 1) / (r^2 + 1).
template <typename Scalar>
Mat2<Scalar> sigma_from_axis_ratio(Scalar diag, Scalar ratio, AxisOrientation orientation) {
    if (!(diag > Scalar(0)))
        throw std::invalid_argument("sigma_from_axis_ratio: diag must be positive");
    if (!(ratio >= Scalar(1)))
        throw std::invalid_argument("sigma_from_axis_ratio: ratio must be >= 1");
    const Scalar r2 = ratio * ratio;
    Scalar b = diag * (r2 - Scalar(1)) / (r2 + Scalar(1));
    if (orientation == AxisOrientation::AlongYEqNegX)
        b = -b;
    Mat2<Scalar> s;
    s << diag, b, b, diag;
    return s;
}

template <typename Scalar>
KernelParams<Scalar> make_kernel(const Vec2<Scalar>& mu, const Mat2<Scalar>& sigma) {
    if (!is_spd(sigma))
        throw std::invalid_argument("make_kernel: covariance is not symmetric positive definite");
    const Scalar det = mat2_det(sigma);
    return {mu, sigma, mat2_inverse(sigma), Scalar(1) / (Scalar(2) * std::numbers::pi_v<Scalar> * std::sqrt(det))};
}

/// Correct-prediction kernel at `epoch`: the off-diagonal of the 2:1 (by
/// default) y=-x ellipse is scaled by the covariance schedule, so the contour
/// starts isotropic and elongates as training proceeds.
template <typename Scalar>
KernelParams<Scalar> build_true_kernel(const WeightPolicy<Scalar>& policy, int epoch) {
    policy.validate();
    const Scalar cs = covariance_schedule<Scalar>(epoch, policy.total_epochs);
    Mat2<Scalar> sigma = sigma_from_axis_ratio(policy.sigma_diag, policy.axis_ratio_true,
                                               AxisOrientation::AlongYEqNegX);
    sigma(0, 1) *= cs;
    sigma(1, 0) *= cs;
    return make_kernel(policy.mu_true, sigma);
}

/// Misprediction kernel; fixed across epochs.
template <typename Scalar>
KernelParams<Scalar> build_false_kernel(const WeightPolicy<Scalar>& policy) {
    policy.validate();
    return make_kernel(policy.mu_false,
                       sigma_from_axis_ratio(policy.sigma_diag, policy.axis_ratio_false,
                                             AxisOrientation::AlongYEqX));
}

template <typename Scalar>
Scalar gaussian_weight(const Vec2<Scalar>& p, const KernelParams<Scalar>& k) {
    const Vec2<Scalar> d = p - k.mu;
    const Scalar quad = d.dot(k.sigma_inv * d);
    return k.norm_const * std::exp(Scalar(-0.5) * quad);
}

/// Both kernels for one epoch, so per-sample weighting does not rebuild them.
template <typename Scalar>
struct EpochKernels {
    KernelParams<Scalar> true_kernel;
    KernelParams<Scalar> false_kernel;

    EpochKernels(const WeightPolicy<Scalar>& policy, int epoch)
        : true_kernel(build_true_kernel(policy, epoch)), false_kernel(build_false_kernel(policy)) {}

    Scalar weight(const PredictionPair<Scalar>& pair) const {
        return gaussian_weight(pair.point(), pair.is_true_prediction ? true_kernel : false_kernel);
    }

    Scalar weight(const ProbVector<Scalar>& probs, Eigen::Index label) const {
        return weight(extract_scores(probs, label));
    }
};

template <typename Scalar>
Scalar naw_weight(const ProbVector<Scalar>& probs, Eigen::Index label, int epoch,
                  const WeightPolicy<Scalar>& policy) {
    return EpochKernels<Scalar>(policy, epoch).weight(probs, label);
}

} // namespace nla

#endif // NLA_NAW_HPP
