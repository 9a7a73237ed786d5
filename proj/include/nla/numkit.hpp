#ifndef NLA_NUMKIT_HPP
#define NLA_NUMKIT_HPP

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace nla {

template <typename Scalar> using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar> using Mat2 = Eigen::Matrix<Scalar, 2, 2>;
template <typename Scalar> using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Vec2d = Vec2<double>;
using Mat2d = Mat2<double>;
using VectorXd = VectorX<double>;
using MatrixXd = MatrixX<double>;

class SingularMatrixError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidStateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A point on the probability simplex. Only produced by softmax() or by
/// from_entries(), which validates the simplex constraints.
template <typename Scalar>
class ProbVector {
public:
    static ProbVector from_entries(VectorX<Scalar> entries) {
        if (entries.size() < 2)
            throw std::invalid_argument("ProbVector needs at least 2 entries");
        for (Eigen::Index k = 0; k < entries.size(); ++k) {
            const Scalar v = entries[k];
            if (!(v >= Scalar(0) && v <= Scalar(1)))
                throw std::invalid_argument("ProbVector entry outside [0, 1]");
        }
        if (std::abs(entries.sum() - Scalar(1)) > Scalar(1e-9))
            throw std::invalid_argument("ProbVector entries do not sum to 1");
        return ProbVector(std::move(entries));
    }

    Eigen::Index size() const { return entries_.size(); }
    Scalar operator[](Eigen::Index k) const { return entries_[k]; }
    const VectorX<Scalar>& entries() const { return entries_; }

private:
    template <typename S, typename D> friend ProbVector<S> softmax(const Eigen::MatrixBase<D>&);
    explicit ProbVector(VectorX<Scalar> entries) : entries_(std::move(entries)) {}

    VectorX<Scalar> entries_;
};

namespace detail {

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& v, const char* what) {
    if (!v.allFinite())
        throw std::invalid_argument(std::string(what) + ": non-finite input");
}

} // namespace detail

template <typename Derived>
typename Derived::Scalar logsumexp(const Eigen::MatrixBase<Derived>& z) {
    using Scalar = typename Derived::Scalar;
    detail::require_finite(z, "logsumexp");
    if (z.size() == 0)
        throw std::invalid_argument("logsumexp: empty input");
    const Scalar top = z.maxCoeff();
    return top + std::log((z.array() - top).exp().sum());
}

/// z - logsumexp(z), computed without forming the probabilities first.
template <typename Derived>
VectorX<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& z) {
    const auto lse = logsumexp(z);
    return (z.array() - lse).matrix();
}

template <typename Scalar, typename Derived>
ProbVector<Scalar> softmax(const Eigen::MatrixBase<Derived>& z) {
    detail::require_finite(z, "softmax");
    if (z.size() < 2)
        throw std::invalid_argument("softmax: need at least 2 logits");
    const Scalar top = z.maxCoeff();
    VectorX<Scalar> e = (z.array() - top).exp().matrix();
    e /= e.sum();
    return ProbVector<Scalar>(std::move(e));
}

template <typename Derived>
ProbVector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& z) {
    return softmax<typename Derived::Scalar, Derived>(z);
}

template <typename Scalar>
Scalar mat2_det(const Mat2<Scalar>& m) {
    return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
}

/// Adjugate inverse. Throws SingularMatrixError when |det| <= 1e-12.
template <typename Scalar>
Mat2<Scalar> mat2_inverse(const Mat2<Scalar>& m) {
    const Scalar det = mat2_det(m);
    if (!(std::abs(det) > Scalar(1e-12)))
        throw SingularMatrixError("mat2_inverse: near-singular matrix");
    Mat2<Scalar> adj;
    adj << m(1, 1), -m(0, 1), -m(1, 0), m(0, 0);
    return adj / det;
}

template <typename Scalar>
bool is_spd(const Mat2<Scalar>& m) {
    return m.allFinite() && m(0, 1) == m(1, 0) && m(0, 0) > Scalar(0) && mat2_det(m) > Scalar(0);
}

} // namespace nla

#endif // NLA_NUMKIT_HPP
