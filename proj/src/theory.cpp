#include "unimd/theory.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "unimd/mcp.hpp"

namespace unimd {

namespace {

void require_negative(double beta) {
    if (!(beta < 0.0) || !std::isfinite(beta)) {
        throw ValidationError("beta must be finite and negative, got " + std::to_string(beta));
    }
}

}  // namespace

double tail_exact(double beta, std::size_t K, std::size_t L) {
    require_negative(beta);
    if (L <= K) return 0.0;
    const double n = static_cast<double>(L - K);
    // e^{β(K+1)} (1 − e^{βn}) / (1 − e^β)
    return std::exp(beta * static_cast<double>(K + 1)) * std::expm1(beta * n) / std::expm1(beta);
}

double tail_naive(double beta, std::size_t K, std::size_t L) {
    require_negative(beta);
    double s = 0.0;
    for (std::size_t k = L; k > K; --k) s += std::exp(beta * static_cast<double>(k));
    return s;
}

double tail_bound(double beta, std::size_t K) {
    require_negative(beta);
    return std::exp(beta * static_cast<double>(K + 1)) / -std::expm1(beta);
}

double log_tail_remainder(double beta, std::size_t L) {
    require_negative(beta);
    return beta * static_cast<double>(L + 1) - std::log(-std::expm1(beta));
}

bool TailMassReport::strictly_below() const {
    if (!std::isfinite(log_remainder) || !(exact_tail <= bound)) return false;
    const double closed = exact_tail + std::exp(log_remainder);
    return std::abs(closed - bound) <= 4.0 * std::numeric_limits<double>::epsilon() * bound;
}

double horizon(double beta, double eta) {
    require_negative(beta);
    if (!(eta > 0.0 && eta < 1.0)) throw ValidationError("eta must lie in (0,1)");
    return std::log(1.0 / eta) / std::abs(beta) - 1.0;
}

std::size_t smallest_bounded_K(double beta, double eta) {
    require_negative(beta);
    if (!(eta > 0.0)) throw ValidationError("eta must be positive");
    const double est = std::log(eta * -std::expm1(beta)) / beta - 1.0;
    std::size_t K = est > 1.0 ? static_cast<std::size_t>(est) - 1 : 0;
    while (K > 0 && tail_bound(beta, K - 1) <= eta) --K;
    while (tail_bound(beta, K) > eta) ++K;
    return K;
}

TailMassReport tail_mass(double beta, std::size_t K, std::size_t L, double eta) {
    require_negative(beta);
    if (L <= K) throw ValidationError("tail_mass: L must exceed K");
    TailMassReport r;
    r.beta = beta;
    r.K = K;
    r.L = L;
    r.exact_tail = tail_exact(beta, K, L);
    r.bound = tail_bound(beta, K);
    r.log_remainder = log_tail_remainder(beta, L);
    r.eta = eta;
    r.horizon = horizon(beta, eta);
    return r;
}

double attention_ratio_law(double beta, std::size_t gap, std::size_t bank_size) {
    const std::size_t n = std::max(gap + 1, bank_size);
    Tensor logits({1, n});
    for (std::size_t i = 0; i < n; ++i) logits[i] = beta * static_cast<double>(i);
    const Tensor p = softmax_rows(logits);
    return p[gap] / p[0];
}

std::vector<InfluenceRow> ssm_influence_decay(const ParamStore& ps, const SsmParams& p,
                                              std::size_t tokens,
                                              const std::vector<std::size_t>& k_list, Rng& rng) {
    if (k_list.empty()) return {};
    const std::size_t ds = p.x_proj.in, e = p.state_dim;
    const std::size_t steps = *std::max_element(k_list.begin(), k_list.end()) + 1;
    std::vector<Tensor> inputs;
    for (std::size_t t = 0; t < steps; ++t) inputs.push_back(rng.normal_tensor({tokens, ds}, 1.0));

    const auto run = [&](bool impulse, std::vector<ScanCache>& caches) {
        caches.assign(steps, {});
        Tensor h({tokens, ds, e});
        for (std::size_t t = 0; t < steps; ++t) {
            Tensor x = inputs[t];
            if (impulse && t == 0) {
                for (double& v : x.values()) v += 1.0;
            }
            h = ssm_scan(ps, p, x, h, &caches[t]).h;
        }
    };
    std::vector<ScanCache> base, kicked;
    run(false, base);
    run(true, kicked);

    const auto state_delta = [&](std::size_t t) { return kicked[t].h_new - base[t].h_new; };
    const Tensor dh0 = state_delta(0);
    const double dh0_max = max_abs(dh0);
    if (!(dh0_max > 0.0)) throw NumericError("ssm_influence_decay: impulse produced no state change");

    std::vector<InfluenceRow> rows;
    for (std::size_t k : k_list) {
        InfluenceRow row;
        row.k = k;
        const Tensor dhk = state_delta(k);
        const Tensor& C = base[k].C;
        double num = 0.0, den = 0.0;
        for (std::size_t n = 0; n < tokens; ++n) {
            for (std::size_t c = 0; c < ds; ++c) {
                double y = 0.0, env = 0.0;
                for (std::size_t j = 0; j < e; ++j) {
                    const std::size_t idx = (n * ds + c) * e + j;
                    y += C(n, j) * dhk[idx];
                    env += std::abs(C(n, j)) * std::abs(dh0[idx]);
                }
                num = std::max(num, std::abs(y));
                den = std::max(den, env);
            }
        }
        row.measured = den > 0.0 ? num / den : 0.0;
        row.state_ratio = max_abs(dhk) / dh0_max;
        if (k == 0) {
            row.c = 0.0;
            row.bound = 1.0;
        } else {
            double c = INFINITY;
            for (std::size_t n = 0; n < tokens; ++n) {
                std::vector<Tensor> deltas;
                for (std::size_t t = 1; t <= k; ++t) {
                    deltas.push_back(slice_rows(base[t].delta, n, 1).reshaped({ds}));
                }
                c = std::min(c, decay_envelope_check(deltas, base[1].A, k).c);
            }
            row.c = c;
            row.bound = std::exp(-c * static_cast<double>(k));
        }
        rows.push_back(row);
    }
    return rows;
}

namespace {

struct SsmDraw {
    ParamStore ps;
    SsmParams p;
};

SsmDraw random_ssm(Rng& rng, std::size_t ds, std::size_t e, std::size_t r) {
    SsmDraw d;
    d.p.dt_rank = r;
    d.p.state_dim = e;
    d.p.x_proj = Linear::create(d.ps, "x_proj", ds, r + 2 * e, false, rng, Init::Xavier, false);
    d.p.dt_proj = Linear::create(d.ps, "dt_proj", r, ds, false, rng, Init::Normal, true, 0.5);
    Tensor& bias = d.ps[*d.p.dt_proj.bias].value;
    for (double& v : bias.values()) {
        const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
        v = dt + std::log(-std::expm1(-dt));
    }
    d.p.a_log = d.ps.add("a_log", rng.uniform_tensor({ds, e}, std::log(0.1), std::log(20.0)), false);
    d.p.d_skip = d.ps.add("d", rng.normal_tensor({ds}, 1.0), false);
    return d;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

}  // namespace

TheoryReport verify_theory(const std::vector<double>& betas, std::size_t K, std::size_t L,
                           const std::vector<double>& etas, std::size_t ssm_draws,
                           std::uint64_t seed) {
    TheoryReport rep;
    std::ostringstream text, csv;
    csv << "check,beta,param,measured,bound,passed\n";
    const auto record = [&](const std::string& check, double beta, const std::string& param,
                            double measured, double bound, bool ok) {
        rep.all_passed = rep.all_passed && ok;
        csv << check << ',' << fmt(beta) << ',' << param << ',' << fmt(measured) << ','
            << fmt(bound) << ',' << (ok ? "true" : "false") << '\n';
        text << (ok ? "PASS " : "FAIL ") << check << " beta=" << fmt(beta) << ' ' << param
             << " measured=" << fmt(measured) << " bound=" << fmt(bound) << '\n';
    };

    for (double beta : betas) {
        const TailMassReport r = tail_mass(beta, K, L);
        record("tail_mass", beta, "K=" + std::to_string(K) + ";L=" + std::to_string(L),
               r.exact_tail, r.bound, r.strictly_below());
        const double naive = tail_naive(beta, K, L);
        record("tail_closed_form", beta, "naive_sum", r.exact_tail, naive,
               std::abs(r.exact_tail - naive) <= 1e-12 * std::max(1.0, naive));
        for (double eta : etas) {
            const std::size_t k_min = smallest_bounded_K(beta, eta);
            const double predicted = std::ceil(horizon(beta, eta));
            record("horizon", beta, "eta=" + fmt(eta), static_cast<double>(k_min), predicted,
                   std::abs(static_cast<double>(k_min) - predicted) <= 1.0);
        }
        for (std::size_t gap = 1; gap <= 16; ++gap) {
            const double ratio = attention_ratio_law(beta, gap);
            const double expect = std::exp(beta * static_cast<double>(gap));
            record("ratio_law", beta, "gap=" + std::to_string(gap), ratio, expect,
                   std::abs(ratio - expect) <= 1e-12);
        }
    }

    Rng rng(seed);
    const std::vector<std::size_t> lags{0, 1, 2, 4, 8, 16};
    double worst = 0.0;
    for (std::size_t draw = 0; draw < ssm_draws; ++draw) {
        SsmDraw d = random_ssm(rng, 8, 4, 2);
        for (const InfluenceRow& row : ssm_influence_decay(d.ps, d.p, 3, lags, rng)) {
            worst = std::max(worst, row.measured / row.bound);
        }
    }
    if (ssm_draws > 0) {
        record("ssm_decay", 0.0, "draws=" + std::to_string(ssm_draws), worst, 1.0,
               worst <= 1.0 + 1e-12);
    }
    rep.text = text.str();
    rep.csv = csv.str();
    return rep;
}

}  // namespace unimd
