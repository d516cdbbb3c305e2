// Copyright (c) 2026 The MAGIC Authors
// SPDX-License-Identifier: Apache-2.0

#include "magic/reference.hpp"

#include <cmath>

#include "magic/errors.hpp"
#include "magic/parallel.hpp"

namespace magic::ref {

namespace {

template <typename ElemFn>
double serial_chunked_sum(int64_t n, ElemFn&& term) {
    double total = 0.0;
    for (int64_t lo = 0; lo < n; lo += kReductionChunk) {
        const int64_t hi = std::min(n, lo + kReductionChunk);
        double part = 0.0;
        for (int64_t i = lo; i < hi; ++i) {
            part += term(i);
        }
        total += part;
    }
    return total;
}

}  // namespace

double lp_norm(const Tensor& t, int p) {
    if (p < 1) {
        fail(errc::out_of_range, "lp_norm requires p >= 1");
    }
    const float* x = t.data();
    double sum = 0.0;
    if (p == 1) {
        sum = serial_chunked_sum(t.numel(), [&](int64_t i) { return std::abs(static_cast<double>(x[i])); });
        return sum;
    }
    if (p == 2) {
        sum = serial_chunked_sum(t.numel(), [&](int64_t i) {
            const double v = x[i];
            return v * v;
        });
        return std::sqrt(sum);
    }
    sum = serial_chunked_sum(t.numel(),
                             [&](int64_t i) { return std::pow(std::abs(static_cast<double>(x[i])), p); });
    return std::pow(sum, 1.0 / p);
}

double dot(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b)) {
        fail(errc::shape_mismatch, "dot: " + a.shape_str() + " vs " + b.shape_str());
    }
    const float* x = a.data();
    const float* y = b.data();
    return serial_chunked_sum(a.numel(), [&](int64_t i) {
        return static_cast<double>(x[i]) * static_cast<double>(y[i]);
    });
}

Tensor axpy(double alpha, const Tensor& x, const Tensor& y) {
    if (!same_shape(x, y)) {
        fail(errc::shape_mismatch, "axpy: " + x.shape_str() + " vs " + y.shape_str());
    }
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        out[i] = static_cast<float>(alpha * static_cast<double>(x[i]) + static_cast<double>(y[i]));
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        fail(errc::shape_mismatch, "matmul: " + a.shape_str() + " x " + b.shape_str());
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t t = 0; t < k; ++t) {
                acc += static_cast<double>(a[i * k + t]) * static_cast<double>(b[t * n + j]);
            }
            out[i * n + j] = static_cast<float>(acc);
        }
    }
    return out;
}

}  // namespace magic::ref
