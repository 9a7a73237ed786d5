#ifndef NLA_CHECKS_HPP
#define NLA_CHECKS_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace nla {

struct CheckResult {
    int id = 0;
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

/// Kernel against a long double evaluation of the density from scratch,
/// 10^4 random (p, mu, Sigma); relative error <= 1e-10 within 5 s.
CheckResult check_kernel_oracle(std::uint64_t seed = 1);
/// CS(0, E) = 0 exactly, CS(E, E) = 1 - e^-10 within 1e-12, strictly increasing.
CheckResult check_schedule_endpoints();
/// Eigenvalue ratios 4 and 36 (+-1e-9) with major axes along (1, -1) and (1, 1).
CheckResult check_derived_covariance();
/// 100 trials of a 32-sample, 7-class MLP batch with the weight frozen;
/// max relative error <= 1e-6 within 60 s.
CheckResult check_gradient_fidelity(std::uint64_t seed = 4);
/// JSD(z, z) = 0, JSD <= 2 ln 2 + 1e-9 over 10^5 pairs, naw_ce >= ce with
/// equality only at ce = 0.
CheckResult check_loss_identities(std::uint64_t seed = 5);

std::vector<CheckResult> run_invariant_checks();

/// "PASS [n] name: detail (1.23 s)"
std::string format_check(const CheckResult& r);

} // namespace nla

#endif // NLA_CHECKS_HPP
