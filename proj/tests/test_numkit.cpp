#include <doctest.h>

#include <cmath>
#include <vector>

#include "nla/numkit.hpp"
#include "nla/rng.hpp"

using namespace nla;

namespace {

// Scalar long-double softmax, independent of the Eigen code path.
std::vector<long double> softmax_oracle(const std::vector<long double>& z) {
    long double sum = 0;
    for (auto v : z)
        sum += std::exp(v);
    std::vector<long double> out;
    for (auto v : z)
        out.push_back(std::exp(v) / sum);
    return out;
}

// Solve m x = rhs by Gaussian elimination with partial pivoting.
Vec2d solve2(const Mat2d& m, const Vec2d& rhs) {
    double a[2][3] = {{m(0, 0), m(0, 1), rhs[0]}, {m(1, 0), m(1, 1), rhs[1]}};
    if (std::abs(a[1][0]) > std::abs(a[0][0]))
        for (int j = 0; j < 3; ++j)
            std::swap(a[0][j], a[1][j]);
    const double f = a[1][0] / a[0][0];
    for (int j = 0; j < 3; ++j)
        a[1][j] -= f * a[0][j];
    const double y = a[1][2] / a[1][1];
    const double x = (a[0][2] - a[0][1] * y) / a[0][0];
    return {x, y};
}

VectorXd random_logits(Rng& rng, int k, double scale) {
    VectorXd z(k);
    for (int i = 0; i < k; ++i)
        z[i] = scale * rng.uniform(-1.0, 1.0);
    return z;
}

} // namespace

TEST_CASE("softmax examples") {
    const auto half = softmax(Eigen::Vector2d(0.0, 0.0));
    CHECK(half[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(half[1] == doctest::Approx(0.5).epsilon(1e-15));

    for (double c : {-5.0, 0.0, 3.25, 700.0}) {
        const auto third = softmax(Eigen::Vector3d(c, c, c));
        for (int k = 0; k < 3; ++k)
            CHECK(std::abs(third[k] - 1.0 / 3.0) < 1e-15);
    }

    const auto p = softmax(Eigen::Vector3d(1.0, 2.0, 3.0));
    const auto oracle = softmax_oracle({1.0L, 2.0L, 3.0L});
    const double frozen[] = {0.09003057317038046, 0.24472847105479767, 0.66524095577482189};
    for (int k = 0; k < 3; ++k) {
        CHECK(std::abs(p[k] - static_cast<double>(oracle[static_cast<std::size_t>(k)])) < 1e-15);
        CHECK(std::abs(p[k] - frozen[k]) < 1e-15);
    }
    CHECK(std::abs(p.entries().sum() - 1.0) < 1e-9);
}

TEST_CASE("softmax rejects bad input") {
    CHECK_THROWS_AS(softmax(Eigen::Vector2d(0.0, std::nan(""))), std::invalid_argument);
    CHECK_THROWS_AS(softmax(Eigen::Vector2d(0.0, INFINITY)), std::invalid_argument);
    CHECK_THROWS_AS(softmax(Eigen::Matrix<double, 1, 1>(1.0)), std::invalid_argument);
}

TEST_CASE("ProbVector validates the simplex") {
    CHECK_NOTHROW(ProbVector<double>::from_entries(Eigen::Vector3d(0.7, 0.2, 0.1)));
    CHECK_THROWS_AS(ProbVector<double>::from_entries(Eigen::Vector3d(0.7, 0.2, 0.2)), std::invalid_argument);
    CHECK_THROWS_AS(ProbVector<double>::from_entries(Eigen::Vector3d(1.1, -0.1, 0.0)), std::invalid_argument);
}

TEST_CASE("softmax is shift invariant") {
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(9));
        const VectorXd z = random_logits(rng, k, 20.0);
        const double shift = rng.uniform(-300.0, 300.0);
        const VectorXd zs = (z.array() + shift).matrix();
        const VectorXd a = softmax(z).entries();
        const VectorXd b = softmax(zs).entries();
        CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("log_softmax equals z - logsumexp without overflow") {
    Rng rng(12);
    for (int trial = 0; trial < 500; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(9));
        const VectorXd z = random_logits(rng, k, 700.0);
        const VectorXd lp = log_softmax(z);
        REQUIRE(lp.allFinite());
        // Independent route: max plus long-double accumulation.
        long double top = z.maxCoeff();
        long double acc = 0;
        for (int i = 0; i < k; ++i)
            acc += std::exp(static_cast<long double>(z[i]) - top);
        const long double lse = top + std::log(acc);
        for (int i = 0; i < k; ++i)
            CHECK(std::abs(lp[i] - static_cast<double>(z[i] - lse)) < 1e-9);
    }
}

TEST_CASE("mat2 determinant and inverse examples") {
    const Mat2d id = Mat2d::Identity();
    CHECK(mat2_det(id) == 1.0);
    CHECK(mat2_inverse(id) == id);

    Mat2d d;
    d << 0.8, 0.0, 0.0, 0.8;
    CHECK(mat2_det(d) == doctest::Approx(0.64).epsilon(1e-15));
    const Mat2d di = mat2_inverse(d);
    CHECK(di(0, 0) == doctest::Approx(1.25).epsilon(1e-15));
    CHECK(di(1, 1) == doctest::Approx(1.25).epsilon(1e-15));
    CHECK(di(0, 1) == 0.0);

    Mat2d s;
    s << 0.8, -0.48, -0.48, 0.8;
    CHECK(std::abs(mat2_det(s) - 0.4096) < 1e-15);
    const Mat2d si = mat2_inverse(s);
    Mat2d expected;
    expected << 0.8, 0.48, 0.48, 0.8;
    expected /= 0.4096;
    CHECK((si - expected).cwiseAbs().maxCoeff() < 1e-12);
    // Brute-force column solves agree with the adjugate route.
    for (int c = 0; c < 2; ++c) {
        const Vec2d col = solve2(s, Vec2d::Unit(c));
        CHECK((col - si.col(c)).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK((s * si - id).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("mat2_inverse rejects near-singular matrices") {
    Mat2d m;
    m << 1.0, 2.0, 0.5, 1.0;
    CHECK_THROWS_AS(mat2_inverse(m), SingularMatrixError);
    m << 1e-7, 0.0, 0.0, 1e-6;
    CHECK_THROWS_AS(mat2_inverse(m), SingularMatrixError);
}

TEST_CASE("quadratic form of an SPD inverse is non-negative") {
    Rng rng(13);
    for (int trial = 0; trial < 2000; ++trial) {
        const double a = rng.uniform(0.01, 3.0);
        const double c = rng.uniform(0.01, 3.0);
        const double b = rng.uniform(-0.999, 0.999) * std::sqrt(a * c);
        Mat2d m;
        m << a, b, b, c;
        REQUIRE(is_spd(m));
        const Vec2d v(rng.uniform(-5, 5), rng.uniform(-5, 5));
        CHECK(v.dot(mat2_inverse(m) * v) >= 0.0);
    }
}

TEST_CASE("splitmix64 reference vector") {
    std::uint64_t s = 0;
    CHECK(splitmix64(s) == 0xE220A8397B1DCDAFULL);
    CHECK(splitmix64(s) == 0x6E789E6AA1B965F4ULL);
    CHECK(splitmix64(s) == 0x06C45D188009454FULL);
}

// Reference values from a direct Python transcription of xoshiro256**.
TEST_CASE("Rng frozen test vectors") {
    Rng rng(42);
    const std::uint64_t expected[] = {
        0x15780B2E0C2EC716ULL,
        0x6104D9866D113A7EULL,
        0xAE17533239E499A1ULL,
    };
    for (auto e : expected)
        CHECK(rng.next_u64() == e);
}

TEST_CASE("Rng streams are reproducible and splits are independent of parent state") {
    Rng a(2024);
    Rng b(2024);
    std::vector<std::uint64_t> sa;
    std::vector<std::uint64_t> sb;
    for (int i = 0; i < 100000; ++i) {
        sa.push_back(a.next_u64());
        sb.push_back(b.next_u64());
    }
    CHECK(sa == sb);

    Rng p(7);
    const Rng child_before = p.split(3);
    p.next_u64();
    Rng child_after = p.split(3);
    Rng cb = child_before;
    CHECK(cb.next_u64() == child_after.next_u64());
    CHECK(split_seed(7, 3) != split_seed(7, 4));
}

TEST_CASE("Rng derived draws") {
    Rng rng(5);
    double sum = 0;
    double sq = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(std::abs(sq / n - 1.0) < 0.02);

    std::vector<int> hist(7, 0);
    for (int i = 0; i < 70000; ++i)
        ++hist[rng.below(7)];
    for (int h : hist)
        CHECK(std::abs(h - 10000) < 500);

    const auto idx = rng.sample_without_replacement(50, 20);
    std::vector<bool> seen(50, false);
    for (auto i : idx) {
        CHECK(i < 50);
        CHECK_FALSE(seen[i]);
        seen[i] = true;
    }
    CHECK_THROWS_AS(rng.below(0), std::invalid_argument);
}
