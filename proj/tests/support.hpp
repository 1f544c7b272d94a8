#pragma once

#include <functional>
#include <vector>

#include "unimd/numerics.hpp"

namespace unimd::test {

/// Fixed random weighting so a tensor output becomes a scalar objective.
inline double weighted_sum(const Tensor& out, const Tensor& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * w[i];
    return s;
}

/// Relative error between analytic gradients already accumulated in `ps` and
/// central differences of `objective`, over the listed parameters taken as
/// one flattened vector.
inline double param_grad_error(const std::function<double()>& objective, ParamStore& ps,
                               const std::vector<ParamId>& ids) {
    std::vector<double> analytic;
    for (ParamId id : ids) {
        const auto& g = ps[id].grad;
        const Tensor t = g ? *g : Tensor(ps[id].value.shape());
        analytic.insert(analytic.end(), t.values().begin(), t.values().end());
    }
    std::vector<double> numeric;
    for (const Tensor& t : finite_diff_grad(objective, ps, ids)) {
        numeric.insert(numeric.end(), t.values().begin(), t.values().end());
    }
    const std::size_t n = analytic.size();
    return relative_error(Tensor({n}, analytic), Tensor({n}, numeric), 1e-7);
}

inline double input_grad_error(const std::function<double()>& objective, Tensor& x,
                               const Tensor& analytic) {
    return relative_error(analytic, finite_diff_grad(objective, x), 1e-7);
}

/// Randomizes every parameter value in place (zero-initialized ones included).
inline void randomize(ParamStore& ps, Rng& rng, double stddev) {
    for (auto& p : ps.all()) {
        for (double& v : p.value.values()) v = rng.normal(0.0, stddev);
    }
}

inline std::vector<ParamId> all_ids(const ParamStore& ps) {
    std::vector<ParamId> ids;
    for (std::size_t i = 0; i < ps.size(); ++i) ids.push_back(i);
    return ids;
}

}  // namespace unimd::test
