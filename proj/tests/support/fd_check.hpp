// SPDX-License-Identifier: Apache-2.0
//
// Test-side finite-difference gradient oracle. Recomputes the loss from
// scratch through a caller-supplied closure and compares central differences
// against analytic gradients coordinate by coordinate. Deliberately knows
// nothing about the tape internals.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "peftlab/param_store.hpp"

namespace peftlab::testing {

struct FdReport {
    double      max_rel_err = 0.0;
    std::string worst_param;
    int64_t     worst_coord   = -1;
    double      worst_analytic = 0.0;
    double      worst_fd       = 0.0;
    int64_t     coords_checked = 0;

    std::string describe() const {
        return "max rel err " + std::to_string(max_rel_err) + " at " + worst_param + "[" +
               std::to_string(worst_coord) + "] analytic=" + std::to_string(worst_analytic) +
               " fd=" + std::to_string(worst_fd) + " over " + std::to_string(coords_checked) + " coords";
    }
};

// Central differences on every coordinate of the named parameters (or every
// stride-th coordinate when stride > 1). The store is restored bit-exactly.
template <typename Real>
FdReport fd_check(ParamStore<Real> & store, const std::vector<std::string> & names,
                  const GradientMap<Real> & analytic, const std::function<double()> & loss_fn,
                  double eps_base = 1e-5, int64_t stride = 1) {
    static_assert(sizeof(Real) == 8, "finite differences need f64 precision");
    FdReport report;
    for (const std::string & name : names) {
        Tensor<Real> & w  = store.tensor(name);
        auto           it = analytic.find(name);
        if (it == analytic.end()) {
            throw std::runtime_error("fd_check: no analytic gradient for " + name);
        }
        const Tensor<Real> & g = it->second;
        for (int64_t i = 0; i < w.numel(); i += stride) {
            const Real saved = w.values[(size_t) i];
            const double eps = eps_base * std::max(1.0, std::abs((double) saved));
            w.values[(size_t) i] = saved + (Real) eps;
            const double up = loss_fn();
            w.values[(size_t) i] = saved - (Real) eps;
            const double down = loss_fn();
            w.values[(size_t) i] = saved;
            const double fd = (up - down) / (2.0 * eps);
            const double an = (double) g.values[(size_t) i];
            const double rel = std::abs(an - fd) / std::max({ std::abs(an), std::abs(fd), 1e-6 });
            report.coords_checked++;
            if (rel > report.max_rel_err) {
                report.max_rel_err    = rel;
                report.worst_param    = name;
                report.worst_coord    = i;
                report.worst_analytic = an;
                report.worst_fd       = fd;
            }
        }
    }
    return report;
}

}  // namespace peftlab::testing
