// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

#include "sparsect/common.hpp"

namespace sparsect {

/// Dense double tensor with an arbitrary shape; the diffusion and latent
/// modules operate on these elementwise, so only shape bookkeeping lives
/// here.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> v;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> values)
        : shape(std::move(s)), v(std::move(values)) {
        require(v.size() == count(shape), "Tensor: data does not match shape");
    }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    static Tensor zeros(std::vector<std::size_t> shape) {
        const std::size_t n = count(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0));
    }

    static Tensor full(std::vector<std::size_t> shape, double value) {
        const std::size_t n = count(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value));
    }

    std::size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool is_zero() const {
        for (double x : v)
            if (x != 0.0) return false;
        return true;
    }
};

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* what) {
    require(a.same_shape(b), std::string(what) + ": tensor shape mismatch");
}

inline double mean_squared(const Tensor& t) {
    double s = 0.0;
    for (double x : t.v) s += x * x;
    return t.size() ? s / static_cast<double>(t.size()) : 0.0;
}

inline double mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.v[i] - b.v[i];
        s += d * d;
    }
    return a.size() ? s / static_cast<double>(a.size()) : 0.0;
}

/// Fills a tensor with unit Gaussian draws from (seed, stream); element i
/// uses counter i, so the result is independent of threading or call order.
inline Tensor gaussian_field(std::vector<std::size_t> shape,
                             std::uint64_t seed, std::uint64_t stream = 0) {
    const CounterRng rng(CounterRng::derive(seed, stream));
    Tensor t = Tensor::zeros(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t.v[i] = rng.gaussian(i);
    return t;
}

}  // namespace sparsect
