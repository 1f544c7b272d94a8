#pragma once

#include <string>
#include <vector>

#include "unimd/dsf.hpp"

namespace unimd {

struct TailMassReport {
    double beta = 0;
    std::size_t K = 0, L = 0;
    double exact_tail = 0;  // Σ_{k=K+1}^{L} e^{βk}, closed form
    double bound = 0;       // e^{β(K+1)}/(1−e^β)
    double log_remainder = 0;  // ln Σ_{k>L} e^{βk}, where the sum is bound − exact_tail
    double eta = 0;
    double horizon = 0;     // ln(1/η)/|β| − 1

    /// exact_tail < bound. The gap can fall below double resolution, so the
    /// strict part is certified by a positive remainder that closes the sum.
    bool strictly_below() const;
};

/// Closed-form geometric partial sum Σ_{k=K+1}^{L} e^{βk}.
double tail_exact(double beta, std::size_t K, std::size_t L);
/// Term-by-term sum of the same series.
double tail_naive(double beta, std::size_t K, std::size_t L);
double tail_bound(double beta, std::size_t K);
/// ln Σ_{k>L} e^{βk}; finite where the sum itself underflows.
double log_tail_remainder(double beta, std::size_t L);
double horizon(double beta, double eta);
/// Smallest K ≥ 0 with tail_bound(beta, K) ≤ eta.
std::size_t smallest_bounded_K(double beta, double eta);

/// Throws ValidationError unless beta < 0 and L > K.
TailMassReport tail_mass(double beta, std::size_t K, std::size_t L, double eta = 0.01);

/// Softmax over zero content logits biased by β·distance (distances
/// 0..n−1, n ≥ gap+1); returns p(distance=gap)/p(distance=0).
double attention_ratio_law(double beta, std::size_t gap, std::size_t bank_size = 0);

struct InfluenceRow {
    std::size_t k = 0;
    double measured = 0;  // output-level influence of the step-0 impulse, normalized
    double state_ratio = 0;  // max|δh_k| / max|δh_0|
    double bound = 1;     // exp(−c·k)
    double c = 0;
};

/// Runs ssm_scan twice over random inputs that differ only by a unit impulse
/// at step 0 and compares the influence at each lag against exp(−c·k).
std::vector<InfluenceRow> ssm_influence_decay(const ParamStore& ps, const SsmParams& p,
                                              std::size_t tokens,
                                              const std::vector<std::size_t>& k_list, Rng& rng);

struct TheoryReport {
    std::string text;
    std::string csv;
    bool all_passed = true;
};

/// Tail-mass, horizon and ratio-law checks for every β, plus SSM decay
/// checks over `ssm_draws` random parameter draws.
TheoryReport verify_theory(const std::vector<double>& betas, std::size_t K, std::size_t L,
                           const std::vector<double>& etas, std::size_t ssm_draws,
                           std::uint64_t seed);

}  // namespace unimd
