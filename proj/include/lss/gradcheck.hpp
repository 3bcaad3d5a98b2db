#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "lss/errors.hpp"
#include "lss/rng.hpp"
#include "lss/tensor.hpp"

namespace lss {

// Central-difference verification of analytic gradients. `f` re-evaluates the
// scalar objective at the current parameter values; `params` are perturbed in
// place and restored. Error metric per coordinate:
//   |analytic - central| / max(1, |analytic|, |central|)
// with central = (f(p+eps) - f(p-eps)) / (2 eps).
//
// max_coords_per_tensor = 0 checks every coordinate; a positive value checks
// that many randomly chosen coordinates per tensor (rng required), which keeps
// full-model checks tractable.
inline double grad_check(const std::function<double()>& f, const std::vector<Tensor*>& params,
                         const std::vector<const Tensor*>& analytic, double eps,
                         std::size_t max_coords_per_tensor = 0, Rng* rng = nullptr) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) {
        throw invalid_argument_error("grad_check: eps must be in [1e-7, 1e-3]");
    }
    if (params.size() != analytic.size()) {
        throw invalid_argument_error("grad_check: params/analytic count mismatch");
    }
    if (max_coords_per_tensor > 0 && rng == nullptr) {
        throw invalid_argument_error("grad_check: coordinate sampling requires an rng");
    }
    double max_err = 0.0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor& p = *params[t];
        const Tensor* a = analytic[t];
        std::vector<std::size_t> coords;
        if (max_coords_per_tensor == 0 || p.numel() <= max_coords_per_tensor) {
            coords.resize(p.numel());
            for (std::size_t i = 0; i < p.numel(); ++i) coords[i] = i;
        } else {
            for (std::size_t i = 0; i < max_coords_per_tensor; ++i) {
                coords.push_back(static_cast<std::size_t>(rng->uniform_int(p.numel())));
            }
        }
        for (std::size_t c : coords) {
            const double saved = p.data[c];
            p.data[c] = saved + eps;
            const double fp = f();
            p.data[c] = saved - eps;
            const double fm = f();
            p.data[c] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw numerical_failure_error("grad_check: non-finite objective evaluation");
            }
            const double central = (fp - fm) / (2.0 * eps);
            const double an = (a && !a->data.empty()) ? a->data[c] : 0.0;
            const double denom = std::max({1.0, std::abs(an), std::abs(central)});
            max_err = std::max(max_err, std::abs(an - central) / denom);
        }
    }
    return max_err;
}

}  // namespace lss
