#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "tsvpr/rng.hpp"
#include "tsvpr/tensor.hpp"

namespace tsvpr::tu {

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    fill_normal(t, stddev, rng);
    return t;
}

inline double max_abs(const Tensor& t) {
    double m = 0.0;
    for (double v : t.values()) m = std::max(m, std::abs(v));
    return m;
}

/// Sum of w[i] * y[i]: a scalar probe that exercises every output element.
inline double weighted_sum(const Tensor& y, const Tensor& w) {
    if (y.size() != w.size()) throw std::invalid_argument("weighted_sum: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
}

/// Central-difference derivative of f with respect to x[i].
inline double numeric_derivative(const std::function<double()>& f, double& x, double h = 1e-6) {
    const double saved = x;
    x = saved + h;
    const double plus = f();
    x = saved - h;
    const double minus = f();
    x = saved;
    return (plus - minus) / (2.0 * h);
}

/// Max over i of |analytic[i] - numeric[i]| / max(1, |numeric[i]|) for every element of x.
inline double max_grad_error(const std::function<double()>& f, Tensor& x, const Tensor& analytic, double h = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double n = numeric_derivative(f, x[i], h);
        worst = std::max(worst, std::abs(analytic[i] - n) / std::max(1.0, std::abs(n)));
    }
    return worst;
}

}  // namespace tsvpr::tu
