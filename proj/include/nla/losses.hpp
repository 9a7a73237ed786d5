#ifndef NLA_LOSSES_HPP
#define NLA_LOSSES_HPP

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string_view>

#include "nla/naw.hpp"
#include "nla/numkit.hpp"

namespace nla {

enum class LossMode { CE, NAW, NLA };

std::string_view to_string(LossMode mode);
LossMode parse_loss_mode(std::string_view text);

template <typename Scalar>
struct CrossEntropy {
    Scalar loss;
    VectorX<Scalar> grad;
};

template <typename Scalar>
struct WeightedCrossEntropy {
    Scalar loss;
    Scalar weight;
    Scalar ce;
    VectorX<Scalar> grad;
};

template <typename Scalar>
struct Consistency {
    Scalar loss;
    VectorX<Scalar> grad_a;
    VectorX<Scalar> grad_b;
};

template <typename Scalar>
struct LossBreakdown {
    Scalar ce = 0;
    Scalar weight = 0;
    Scalar naw_ce = 0;
    Scalar reg = 0;
    Scalar total = 0;
    VectorX<Scalar> grad_logits;
    VectorX<Scalar> grad_logits_aux;
};

namespace detail {

inline void require_label(Eigen::Index label, Eigen::Index k, const char* what) {
    if (label < 0 || label >= k)
        throw std::invalid_argument(std::string(what) + ": label out of range");
}

} // namespace detail

/// -log softmax(z)[label] via log-sum-exp; gradient softmax(z) - onehot(label).
template <typename Derived>
CrossEntropy<typename Derived::Scalar> cross_entropy(const Eigen::MatrixBase<Derived>& logits,
                                                     Eigen::Index label) {
    using Scalar = typename Derived::Scalar;
    detail::require_label(label, logits.size(), "cross_entropy");
    const Scalar lse = logsumexp(logits);
    VectorX<Scalar> grad = softmax(logits).entries();
    grad[label] -= Scalar(1);
    return {lse - logits[label], std::move(grad)};
}

/// (1 + weight) * CE for a caller-supplied weight.
template <typename Derived>
WeightedCrossEntropy<typename Derived::Scalar>
weighted_ce_loss(const Eigen::MatrixBase<Derived>& logits, Eigen::Index label, typename Derived::Scalar weight) {
    using Scalar = typename Derived::Scalar;
    auto ce = cross_entropy(logits, label);
    const Scalar scale = Scalar(1) + weight;
    return {scale * ce.loss, weight, ce.loss, scale * ce.grad};
}

/// (1 + w) * CE, with w computed from the current probabilities and treated
/// as a constant (no gradient flows through the kernel).
template <typename Derived>
WeightedCrossEntropy<typename Derived::Scalar>
naw_ce_loss(const Eigen::MatrixBase<Derived>& logits, Eigen::Index label,
            const EpochKernels<typename Derived::Scalar>& kernels) {
    return weighted_ce_loss(logits, label, kernels.weight(softmax(logits), label));
}

template <typename Derived>
WeightedCrossEntropy<typename Derived::Scalar>
naw_ce_loss(const Eigen::MatrixBase<Derived>& logits, Eigen::Index label, int epoch,
            const WeightPolicy<typename Derived::Scalar>& policy) {
    return naw_ce_loss(logits, label, EpochKernels<typename Derived::Scalar>(policy, epoch));
}

/// KL(p || m) + KL(q || m) with p, q the softmaxes of the two logit vectors
/// and m their average. log m is formed in the log domain
/// (logaddexp(log p, log q) - ln 2), so no floor is needed and 0 log 0 = 0
/// falls out of multiplying by p.
template <typename DerivedA, typename DerivedB>
Consistency<typename DerivedA::Scalar> consistency_loss(const Eigen::MatrixBase<DerivedA>& logits_a,
                                                        const Eigen::MatrixBase<DerivedB>& logits_b) {
    using Scalar = typename DerivedA::Scalar;
    if (logits_a.size() != logits_b.size())
        throw std::invalid_argument("consistency_loss: logit vectors differ in length");
    const VectorX<Scalar> log_p = log_softmax(logits_a);
    const VectorX<Scalar> log_q = log_softmax(logits_b);
    const VectorX<Scalar> p = log_p.array().exp().matrix();
    const VectorX<Scalar> q = log_q.array().exp().matrix();

    const Eigen::Index k = p.size();
    VectorX<Scalar> log_m(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        const Scalar hi = std::max(log_p[i], log_q[i]);
        const Scalar lo = std::min(log_p[i], log_q[i]);
        // log((e^hi + e^lo) / 2) = hi + log1p(expm1(lo - hi) / 2); exactly hi when lo == hi.
        log_m[i] = hi + std::log1p(std::expm1(lo - hi) / Scalar(2));
    }

    // dL/dp_i = log(p_i / m_i); chain through the softmax Jacobian diag(p) - p p^T.
    const VectorX<Scalar> g_p = log_p - log_m;
    const VectorX<Scalar> g_q = log_q - log_m;
    const Scalar loss = p.dot(g_p) + q.dot(g_q);
    VectorX<Scalar> grad_a = (p.array() * (g_p.array() - p.dot(g_p))).matrix();
    VectorX<Scalar> grad_b = (q.array() * (g_q.array() - q.dot(g_q))).matrix();
    return {std::max(loss, Scalar(0)), std::move(grad_a), std::move(grad_b)};
}

/// Per-sample objective for one (original, flipped) logit pair with the
/// weight w supplied by the caller.
///   CE : total = ce                      (w ignored, reported as 0)
///   NAW: total = (1 + w) ce
///   NLA: total = lambda (1 + w) ce + (1 - lambda) reg
template <typename DerivedA, typename DerivedB>
LossBreakdown<typename DerivedA::Scalar>
total_loss_with_weight(const Eigen::MatrixBase<DerivedA>& logits, const Eigen::MatrixBase<DerivedB>& flipped_logits,
                       Eigen::Index label, typename DerivedA::Scalar weight, typename DerivedA::Scalar lambda,
                       LossMode mode) {
    using Scalar = typename DerivedA::Scalar;
    if (!(lambda >= Scalar(0) && lambda <= Scalar(1)))
        throw std::invalid_argument("total_loss: lambda must lie in [0, 1]");
    LossBreakdown<Scalar> out;
    const Eigen::Index k = logits.size();
    if (mode == LossMode::CE) {
        auto ce = cross_entropy(logits, label);
        out.ce = out.naw_ce = out.total = ce.loss;
        out.grad_logits = std::move(ce.grad);
        out.grad_logits_aux = VectorX<Scalar>::Zero(k);
        return out;
    }
    auto naw = weighted_ce_loss(logits, label, weight);
    out.ce = naw.ce;
    out.weight = naw.weight;
    out.naw_ce = naw.loss;
    if (mode == LossMode::NAW) {
        out.total = naw.loss;
        out.grad_logits = std::move(naw.grad);
        out.grad_logits_aux = VectorX<Scalar>::Zero(k);
        return out;
    }
    auto reg = consistency_loss(logits, flipped_logits);
    out.reg = reg.loss;
    out.total = lambda * naw.loss + (Scalar(1) - lambda) * reg.loss;
    out.grad_logits = lambda * naw.grad + (Scalar(1) - lambda) * reg.grad_a;
    out.grad_logits_aux = (Scalar(1) - lambda) * reg.grad_b;
    return out;
}

/// As above with w taken from the epoch's kernels at softmax(logits).
template <typename DerivedA, typename DerivedB>
LossBreakdown<typename DerivedA::Scalar>
total_loss(const Eigen::MatrixBase<DerivedA>& logits, const Eigen::MatrixBase<DerivedB>& flipped_logits,
           Eigen::Index label, const EpochKernels<typename DerivedA::Scalar>& kernels,
           typename DerivedA::Scalar lambda, LossMode mode = LossMode::NLA) {
    using Scalar = typename DerivedA::Scalar;
    const Scalar w = mode == LossMode::CE ? Scalar(0) : kernels.weight(softmax(logits), label);
    return total_loss_with_weight(logits, flipped_logits, label, w, lambda, mode);
}

template <typename DerivedA, typename DerivedB>
LossBreakdown<typename DerivedA::Scalar>
total_loss(const Eigen::MatrixBase<DerivedA>& logits, const Eigen::MatrixBase<DerivedB>& flipped_logits,
           Eigen::Index label, int epoch, const WeightPolicy<typename DerivedA::Scalar>& policy,
           typename DerivedA::Scalar lambda) {
    return total_loss(logits, flipped_logits, label,
                      EpochKernels<typename DerivedA::Scalar>(policy, epoch), lambda, LossMode::NLA);
}

} // namespace nla

#endif // NLA_LOSSES_HPP
