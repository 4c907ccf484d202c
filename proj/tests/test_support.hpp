#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "sepp/rng.hpp"
#include "sepp/tensor.hpp"

// Shared test oracles. The finite-difference checker here is the independent
// ground truth for every backward rule; keep it free of any dependence on the
// tensor library's own gradients.

namespace sepp::testing {

/// Precision-matched defaults: central-difference step and the relative error
/// each build is held to.
template <typename Real>
struct FdDefaults;

template <>
struct FdDefaults<float> {
    static constexpr double eps = 1e-3;
    static constexpr double tol = 1e-3;
};

template <>
struct FdDefaults<double> {
    static constexpr double eps = 1e-6;
    static constexpr double tol = 1e-6;
};

template <typename Real>
std::vector<Real> random_values(std::size_t n, std::uint64_t seed,
                                double lo = -2.0, double hi = 2.0) {
    rng::Stream stream(seed);
    std::vector<Real> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = static_cast<Real>(stream.uniform(lo, hi));
    }
    return out;
}

template <typename Real>
Tensor<Real> random_tensor(Shape shape, std::uint64_t seed, double lo = -2.0,
                           double hi = 2.0, bool requires_grad = true) {
    const std::size_t n = shape_numel(shape);
    return Tensor<Real>::from_values(std::move(shape), random_values<Real>(n, seed, lo, hi),
                                     requires_grad);
}

/// Central finite differences of a scalar function at x0, one coordinate at a
/// time, compared against an analytic gradient. The error is normalized by
/// the largest gradient magnitude so near-zero entries are judged on the same
/// scale as the rest of the vector.
template <typename Real>
double max_rel_grad_err(const std::function<double(const std::vector<Real>&)>& eval,
                        const std::vector<Real>& x0,
                        const std::vector<Real>& analytic,
                        double eps) {
    std::vector<Real> x = x0;
    double scale = 1e-12;
    std::vector<double> fd(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        const Real keep = x[i];
        x[i] = keep + static_cast<Real>(eps);
        const double up = eval(x);
        x[i] = keep - static_cast<Real>(eps);
        const double down = eval(x);
        x[i] = keep;
        fd[i] = (up - down) / (2.0 * eps);
        scale = std::max(scale, std::abs(fd[i]));
        scale = std::max(scale, std::abs(static_cast<double>(analytic[i])));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        worst = std::max(worst, std::abs(fd[i] - static_cast<double>(analytic[i])) / scale);
    }
    return worst;
}

/// Collapse a tensor-valued graph output into a scalar through a fixed random
/// linear functional, so gradient checks see non-degenerate output adjoints.
template <typename Real>
Tensor<Real> to_scalar_loss(const Tensor<Real>& y, std::uint64_t seed = 7) {
    Tensor<Real> probe = random_tensor<Real>(y.shape(), seed, -1.0, 1.0, false);
    return sum(mul(y, probe));
}

} // namespace sepp::testing
