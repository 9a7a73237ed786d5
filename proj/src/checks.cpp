#include "nla/checks.hpp"

#include <Eigen/Eigenvalues>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "nla/data.hpp"
#include "nla/losses.hpp"
#include "nla/model.hpp"
#include "nla/naw.hpp"
#include "nla/rng.hpp"
#include "nla/trainer.hpp"

namespace nla {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

// Density written out term by term: solve Sigma x = d by Cramer's rule and
// form the normaliser from the determinant, all in long double.
long double brute_density(long double px, long double py, long double mx, long double my, long double a,
                          long double b, long double c) {
    const long double dx = px - mx;
    const long double dy = py - my;
    const long double det = a * c - b * b;
    const long double sx = (dx * c - b * dy) / det;
    const long double sy = (a * dy - b * dx) / det;
    const long double quad = dx * sx + dy * sy;
    return std::exp(-0.5L * quad) / (2.0L * std::numbers::pi_v<long double> * std::sqrt(det));
}

} // namespace

CheckResult check_kernel_oracle(std::uint64_t seed) {
    const auto t0 = Clock::now();
    Rng rng(seed);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double a = rng.uniform(0.1, 2.0);
        const double c = rng.uniform(0.1, 2.0);
        const double b = rng.uniform(-0.95, 0.95) * std::sqrt(a * c);
        const Vec2d mu(rng.uniform(), rng.uniform());
        const Vec2d p(rng.uniform(), rng.uniform());
        Mat2d sigma;
        sigma << a, b, b, c;
        const double w = gaussian_weight(p, make_kernel(mu, sigma));
        const long double ref = brute_density(p[0], p[1], mu[0], mu[1], a, b, c);
        const double rel = static_cast<double>(std::abs(static_cast<long double>(w) - ref) / ref);
        worst = std::max(worst, rel);
    }
    CheckResult r{1, "kernel oracle equivalence", false, {}, seconds_since(t0)};
    r.passed = worst <= 1e-10 && r.seconds < 5.0;
    r.detail = fmt("max rel error %.3g over 10^4 triples", worst);
    return r;
}

CheckResult check_schedule_endpoints() {
    const auto t0 = Clock::now();
    const double target = 1.0 - std::exp(-10.0);
    bool ok = true;
    double worst_end = 0.0;
    for (int e_total : {1, 10, 60, 1000}) {
        ok = ok && covariance_schedule(0, e_total) == 0.0;
        worst_end = std::max(worst_end, std::abs(covariance_schedule(e_total, e_total) - target));
        for (int e = 1; e <= e_total; ++e)
            ok = ok && covariance_schedule(e, e_total) > covariance_schedule(e - 1, e_total);
    }
    CheckResult r{2, "scheduler endpoints", ok && worst_end <= 1e-12, {}, seconds_since(t0)};
    r.detail = fmt("max |CS(E,E) - (1 - e^-10)| = %.3g; start and monotonicity ", worst_end) + (ok ? "ok" : "violated");
    return r;
}

CheckResult check_derived_covariance() {
    const auto t0 = Clock::now();
    auto probe = [](double ratio, AxisOrientation orient, const Vec2d& dir, double& ratio_out, double& align_out) {
        const Mat2d s = sigma_from_axis_ratio(0.8, ratio, orient);
        Eigen::SelfAdjointEigenSolver<Mat2d> es(s);
        ratio_out = es.eigenvalues()[1] / es.eigenvalues()[0];
        align_out = std::abs(es.eigenvectors().col(1).dot(dir.normalized()));
    };
    double r_true = 0, a_true = 0, r_false = 0, a_false = 0;
    probe(2.0, AxisOrientation::AlongYEqNegX, Vec2d(1, -1), r_true, a_true);
    probe(6.0, AxisOrientation::AlongYEqX, Vec2d(1, 1), r_false, a_false);
    const bool ok = std::abs(r_true - 4.0) <= 1e-9 && std::abs(r_false - 36.0) <= 1e-9 &&
                    std::abs(a_true - 1.0) <= 1e-9 && std::abs(a_false - 1.0) <= 1e-9;
    CheckResult r{3, "derived covariance", ok, {}, seconds_since(t0)};
    r.detail = fmt("eigenvalue ratios %.12g and %.12g", r_true, r_false) +
               fmt("; |cos| to expected major axes %.12g, %.12g", a_true, a_false);
    return r;
}

CheckResult check_gradient_fidelity(std::uint64_t seed) {
    const auto t0 = Clock::now();
    Rng rng(seed);
    const WeightPolicyd policy;
    const Architecture arch{8, 16, 7};
    const auto view = ViewTransform::mirror_first(arch.input_dim);
    constexpr int n = 32;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto params = init_params(arch, rng);
        MatrixXd x(n, arch.input_dim);
        for (Eigen::Index i = 0; i < x.size(); ++i)
            x.data()[i] = 1.5 * rng.normal();
        const MatrixXd xf = view.apply(x);
        std::vector<int> y(n);
        for (auto& v : y)
            v = static_cast<int>(rng.below(static_cast<std::uint64_t>(arch.output_dim)));
        const EpochKernels<double> kernels(policy, static_cast<int>(rng.below(61)));
        const double lambda = 0.5;
        const auto br = evaluate_batch(params, x, xf, y, kernels, lambda, LossMode::NLA);

        const MatrixX<long double> xl = x.cast<long double>();
        const MatrixX<long double> xfl = xf.cast<long double>();
        auto loss = [&](const ModelParams& p) {
            const MatrixX<long double> za = forward_logits(p, xl);
            const MatrixX<long double> zb = forward_logits(p, xfl);
            long double sum = 0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const VectorX<long double> a = za.row(i).transpose();
                const VectorX<long double> b = zb.row(i).transpose();
                const auto k = static_cast<std::size_t>(i);
                sum += total_loss_with_weight(a, b, y[k], static_cast<long double>(br.weights[k]),
                                              static_cast<long double>(lambda), LossMode::NLA)
                           .total;
            }
            return sum / n;
        };
        worst = std::max(worst, gradient_check(params, loss, br.grads).max_relative_error);
    }
    CheckResult r{4, "gradient fidelity", false, {}, seconds_since(t0)};
    r.passed = worst <= 1e-6 && r.seconds < 60.0;
    r.detail = fmt("max rel error %.3g over 100 batches of 32, K = 7", worst);
    return r;
}

CheckResult check_loss_identities(std::uint64_t seed) {
    const auto t0 = Clock::now();
    Rng rng(seed);
    const WeightPolicyd policy;
    const double bound = 2.0 * std::numbers::ln2 + 1e-9;
    bool self_zero = true;
    bool bounded = true;
    bool dominance = true;
    double max_jsd = 0.0;
    long equal_cases = 0;
    for (int i = 0; i < 100000; ++i) {
        const int k = 2 + static_cast<int>(rng.below(9));
        const double scale = (i % 4 == 3) ? 200.0 : (i % 2 ? 20.0 : 3.0);
        VectorXd a(k), b(k);
        for (int j = 0; j < k; ++j) {
            a[j] = scale * rng.uniform(-1.0, 1.0);
            b[j] = scale * rng.uniform(-1.0, 1.0);
        }
        if (i % 1000 == 0) {
            const auto same = consistency_loss(a, a);
            self_zero = self_zero && same.loss == 0.0;
        }
        const double jsd = consistency_loss(a, b).loss;
        max_jsd = std::max(max_jsd, jsd);
        bounded = bounded && jsd >= 0.0 && jsd <= bound;

        const int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
        const auto r = naw_ce_loss(a, label, static_cast<int>(rng.below(61)), policy);
        const double ce = cross_entropy(a, label).loss;
        if (ce > 0.0)
            dominance = dominance && r.loss > ce;
        else {
            dominance = dominance && r.loss == 0.0;
            ++equal_cases;
        }
    }
    CheckResult r{5, "loss identities", self_zero && bounded && dominance, {}, seconds_since(t0)};
    r.detail = fmt("max consistency %.12g (bound 2 ln 2 = %.12g)", max_jsd, 2.0 * std::numbers::ln2) +
               "; self-consistency " + (self_zero ? "0" : "nonzero") + "; naw_ce > ce whenever ce > 0 " +
               (dominance ? "holds" : "violated") + " (" + std::to_string(equal_cases) + " cases at ce = 0)";
    return r;
}

std::vector<CheckResult> run_invariant_checks() {
    return {check_kernel_oracle(), check_schedule_endpoints(), check_derived_covariance(), check_gradient_fidelity(),
            check_loss_identities()};
}

std::string format_check(const CheckResult& r) {
    char t[32];
    std::snprintf(t, sizeof t, "%.2f s", r.seconds);
    return std::string(r.passed ? "PASS" : "FAIL") + " [" + std::to_string(r.id) + "] " + r.name + ": " + r.detail +
           " (" + t + ")";
}

} // namespace nla
