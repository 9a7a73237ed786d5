#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "nla/losses.hpp"
#include "nla/rng.hpp"

using namespace nla;

namespace {

constexpr double kLn7 = 1.945910149055313305;
constexpr double kTwoLn2 = 1.386294361119890618;
constexpr double kCIso = 0.198943678864869169;

VectorXd random_logits(Rng& rng, int k, double scale = 3.0) {
    VectorXd z(k);
    for (int i = 0; i < k; ++i)
        z[i] = scale * rng.uniform(-1.0, 1.0);
    return z;
}

using VectorXl = VectorX<long double>;

// Central differences evaluated in long double so rounding noise stays far
// below the tolerance even for tiny gradient entries.
VectorXd central_difference(const std::function<long double(const VectorXl&)>& f, const VectorXd& x,
                            long double h = 1e-5L) {
    const VectorXl xl = x.cast<long double>();
    VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        VectorXl up = xl;
        VectorXl dn = xl;
        up[i] += h;
        dn[i] -= h;
        g[i] = static_cast<double>((f(up) - f(dn)) / (2 * h));
    }
    return g;
}

double max_rel_error(const VectorXd& a, const VectorXd& b) {
    double worst = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), 1e-6}));
    return worst;
}

// Direct KL-sum evaluation from probabilities, for comparison.
template <typename Scalar>
Scalar jsd_sum_oracle(const VectorX<Scalar>& za, const VectorX<Scalar>& zb) {
    const VectorX<Scalar> p = softmax(za).entries();
    const VectorX<Scalar> q = softmax(zb).entries();
    Scalar s = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const Scalar m = (p[i] + q[i]) / 2;
        if (p[i] > 0)
            s += p[i] * std::log(p[i] / m);
        if (q[i] > 0)
            s += q[i] * std::log(q[i] / m);
    }
    return s;
}

} // namespace

TEST_CASE("cross_entropy examples") {
    const auto uniform = cross_entropy(VectorXd::Constant(7, 0.3), 2);
    CHECK(std::abs(uniform.loss - kLn7) < 1e-14);

    VectorXd confident(3);
    confident << 60.0, 0.0, 0.0;
    CHECK(cross_entropy(confident, 0).loss < 1e-25);

    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(9));
        const auto ce = cross_entropy(random_logits(rng, k, 50.0), static_cast<int>(rng.below(k)));
        CHECK(std::abs(ce.grad.sum()) < 1e-12);
        CHECK(ce.loss >= 0.0);
    }
    CHECK_THROWS_AS(cross_entropy(VectorXd::Zero(3), 3), std::invalid_argument);
}

TEST_CASE("naw_ce_loss examples") {
    const WeightPolicyd policy;
    VectorXd z(3);
    z << 0.0, 0.0, -800.0;
    const auto r = naw_ce_loss(z, 0, 0, policy);
    CHECK(std::abs(r.weight - kCIso) < 1e-15);
    CHECK(std::abs(r.loss - (1 + kCIso) * std::numbers::ln2) < 1e-14);

    const auto plain = weighted_ce_loss(z, 1, 0.0);
    const auto ce = cross_entropy(z, 1);
    CHECK(plain.loss == ce.loss);
    CHECK(plain.grad == ce.grad);
}

TEST_CASE("loss gradients match central differences with the weight frozen") {
    Rng rng(32);
    const WeightPolicyd policy;
    double worst_ce = 0;
    double worst_naw = 0;
    double worst_reg = 0;
    double worst_total = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 7;
        const VectorXd z = random_logits(rng, k);
        const VectorXd zf = random_logits(rng, k);
        const int label = static_cast<int>(rng.below(k));
        const int epoch = static_cast<int>(rng.below(61));
        const EpochKernels<double> kernels(policy, epoch);

        const VectorXl zl = z.cast<long double>();
        const VectorXl zfl = zf.cast<long double>();
        auto ce_f = [&](const VectorXl& x) { return cross_entropy(x, label).loss; };
        worst_ce = std::max(worst_ce, max_rel_error(cross_entropy(z, label).grad, central_difference(ce_f, z)));

        const auto naw = naw_ce_loss(z, label, kernels);
        auto naw_f = [&](const VectorXl& x) {
            return weighted_ce_loss(x, label, static_cast<long double>(naw.weight)).loss;
        };
        worst_naw = std::max(worst_naw, max_rel_error(naw.grad, central_difference(naw_f, z)));

        const auto reg = consistency_loss(z, zf);
        auto reg_a = [&](const VectorXl& x) { return jsd_sum_oracle(x, zfl); };
        auto reg_b = [&](const VectorXl& x) { return jsd_sum_oracle(zl, x); };
        worst_reg = std::max(worst_reg, max_rel_error(reg.grad_a, central_difference(reg_a, z)));
        worst_reg = std::max(worst_reg, max_rel_error(reg.grad_b, central_difference(reg_b, zf)));

        const double lambda = rng.uniform();
        const auto tot = total_loss(z, zf, label, kernels, lambda, LossMode::NLA);
        const auto wl = static_cast<long double>(tot.weight);
        const auto ll = static_cast<long double>(lambda);
        auto tot_a = [&](const VectorXl& x) {
            return total_loss_with_weight(x, zfl, label, wl, ll, LossMode::NLA).total;
        };
        auto tot_b = [&](const VectorXl& x) {
            return total_loss_with_weight(zl, x, label, wl, ll, LossMode::NLA).total;
        };
        worst_total = std::max(worst_total, max_rel_error(tot.grad_logits, central_difference(tot_a, z)));
        worst_total = std::max(worst_total, max_rel_error(tot.grad_logits_aux, central_difference(tot_b, zf)));
    }
    CHECK(worst_ce < 1e-6);
    CHECK(worst_naw < 1e-6);
    CHECK(worst_reg < 1e-6);
    CHECK(worst_total < 1e-6);
}

TEST_CASE("consistency_loss examples") {
    Rng rng(33);
    const VectorXd z = random_logits(rng, 7);
    const auto same = consistency_loss(z, z);
    CHECK(same.loss == 0.0);
    CHECK(same.grad_a.cwiseAbs().maxCoeff() == 0.0);
    CHECK(same.grad_b.cwiseAbs().maxCoeff() == 0.0);

    VectorXd a(2);
    VectorXd b(2);
    a << 400.0, -400.0;
    b << -400.0, 400.0;
    const auto extreme = consistency_loss(a, b);
    CHECK(std::isfinite(extreme.loss));
    CHECK(std::abs(extreme.loss - kTwoLn2) < 1e-12);
    CHECK(extreme.grad_a.allFinite());

    CHECK_THROWS_AS(consistency_loss(VectorXd::Zero(3), VectorXd::Zero(4)), std::invalid_argument);
}

TEST_CASE("consistency_loss is symmetric, bounded and matches the direct sum") {
    Rng rng(34);
    for (int trial = 0; trial < 20000; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(9));
        const double scale = trial % 2 ? 3.0 : 60.0;
        const VectorXd a = random_logits(rng, k, scale);
        const VectorXd b = random_logits(rng, k, scale);
        const auto ab = consistency_loss(a, b);
        const auto ba = consistency_loss(b, a);
        CHECK(ab.loss == ba.loss);
        CHECK(ab.grad_a == ba.grad_b);
        CHECK(ab.loss >= 0.0);
        CHECK(ab.loss <= kTwoLn2 + 1e-9);
        CHECK(std::abs(ab.loss - jsd_sum_oracle(a, b)) < 1e-12);
    }
}

TEST_CASE("consistency_loss is exactly zero for identical views") {
    Rng rng(38);
    for (int trial = 0; trial < 20000; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(9));
        const VectorXd z = random_logits(rng, k, trial % 2 ? 300.0 : 5.0);
        const auto r = consistency_loss(z, z);
        CHECK(r.loss == 0.0);
        CHECK(r.grad_a.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("consistency_loss vanishes for shifted logits") {
    Rng rng(35);
    for (int trial = 0; trial < 100; ++trial) {
        const VectorXd a = random_logits(rng, 5);
        const VectorXd b = (a.array() + rng.uniform(-10, 10)).matrix();
        CHECK(consistency_loss(a, b).loss < 1e-14);
    }
}

TEST_CASE("total_loss breakdown invariants") {
    Rng rng(36);
    const WeightPolicyd policy;
    for (int trial = 0; trial < 2000; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(9));
        const VectorXd z = random_logits(rng, k, 6.0);
        const VectorXd zf = random_logits(rng, k, 6.0);
        const int label = static_cast<int>(rng.below(k));
        const double lambda = rng.uniform();
        const auto r = total_loss(z, zf, label, static_cast<int>(rng.below(61)), policy, lambda);
        CHECK(std::abs(r.naw_ce - (1 + r.weight) * r.ce) < 1e-12);
        CHECK(std::abs(r.total - (lambda * r.naw_ce + (1 - lambda) * r.reg)) < 1e-12);
        CHECK(r.weight > 0.0);
        CHECK(r.reg >= 0.0);
        CHECK(r.reg <= kTwoLn2 + 1e-9);
        if (r.ce > 0)
            CHECK(r.naw_ce > r.ce);
    }
}

TEST_CASE("total_loss lambda and mode cases") {
    Rng rng(37);
    const WeightPolicyd policy;
    const VectorXd z = random_logits(rng, 7);
    const VectorXd zf = random_logits(rng, 7);
    const EpochKernels<double> kernels(policy, 5);

    const auto one = total_loss(z, zf, 3, kernels, 1.0);
    CHECK(one.total == doctest::Approx(one.naw_ce).epsilon(1e-15));
    CHECK(one.grad_logits_aux.cwiseAbs().maxCoeff() == 0.0);

    const auto ce = total_loss(z, zf, 3, kernels, 0.5, LossMode::CE);
    CHECK(ce.total == ce.ce);
    CHECK(ce.reg == 0.0);
    CHECK(ce.weight == 0.0);
    CHECK(ce.grad_logits == cross_entropy(z, 3).grad);

    const auto naw = total_loss(z, zf, 3, kernels, 0.5, LossMode::NAW);
    CHECK(naw.total == naw.naw_ce);
    CHECK(naw.reg == 0.0);

    CHECK_THROWS_AS(total_loss(z, zf, 3, kernels, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(total_loss(z, zf, 3, kernels, -0.1), std::invalid_argument);
}

TEST_CASE("loss mode names") {
    CHECK(parse_loss_mode("ce") == LossMode::CE);
    CHECK(parse_loss_mode("naw") == LossMode::NAW);
    CHECK(parse_loss_mode("nla") == LossMode::NLA);
    CHECK(parse_loss_mode("naw-ce+reg") == LossMode::NLA);
    for (auto m : {LossMode::CE, LossMode::NAW, LossMode::NLA})
        CHECK(parse_loss_mode(to_string(m)) == m);
    CHECK_THROWS_AS(parse_loss_mode("focal"), std::invalid_argument);
}
