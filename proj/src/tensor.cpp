// Copyright (c) 2026 The MAGIC Authors
// SPDX-License-Identifier: Apache-2.0

#include "magic/tensor.hpp"

#include <cmath>
#include <sstream>

#include "magic/errors.hpp"
#include "magic/parallel.hpp"

namespace magic {

namespace {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) {
            fail(errc::shape_mismatch, "non-positive dimension in shape");
        }
        n *= d;
    }
    return n;
}

// Chunk partials are always combined in chunk order, so the result is
// independent of the thread count.
template <typename ChunkFn>
double chunked_reduce(int64_t n, ChunkFn&& chunk_sum) {
    const int64_t nchunks = (n + kReductionChunk - 1) / kReductionChunk;
    if (nchunks <= 1) {
        return n == 0 ? 0.0 : chunk_sum(0, n);
    }
    std::vector<double> partials(static_cast<size_t>(nchunks));
#pragma omp parallel for num_threads(max_threads()) if (n >= kParallelGrain)
    for (int64_t c = 0; c < nchunks; ++c) {
        const int64_t lo = c * kReductionChunk;
        const int64_t hi = std::min(n, lo + kReductionChunk);
        partials[static_cast<size_t>(c)] = chunk_sum(lo, hi);
    }
    double total = 0.0;
    for (double part : partials) {
        total += part;
    }
    return total;
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
        fail(errc::shape_mismatch, "data length does not match shape " + shape_str());
    }
}

Tensor Tensor::identity(int64_t n) {
    Tensor t({n, n});
    for (int64_t i = 0; i < n; ++i) {
        t[i * n + i] = 1.0f;
    }
    return t;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape_.size(); ++i) {
        os << (i ? "," : "") << shape_[i];
    }
    os << ']';
    return os.str();
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!same_shape(a, b)) {
        fail(errc::shape_mismatch,
             std::string(op) + ": " + a.shape_str() + " vs " + b.shape_str());
    }
}

double lp_norm(const Tensor& t, int p) {
    if (p < 1) {
        fail(errc::out_of_range, "lp_norm requires p >= 1");
    }
    const float* x = t.data();
    const double sum = chunked_reduce(t.numel(), [&](int64_t lo, int64_t hi) {
        double s = 0.0;
        if (p == 1) {
            for (int64_t i = lo; i < hi; ++i) s += std::abs(static_cast<double>(x[i]));
        } else if (p == 2) {
            for (int64_t i = lo; i < hi; ++i) {
                const double v = x[i];
                s += v * v;
            }
        } else {
            for (int64_t i = lo; i < hi; ++i)
                s += std::pow(std::abs(static_cast<double>(x[i])), p);
        }
        return s;
    });
    if (p == 1) return sum;
    if (p == 2) return std::sqrt(sum);
    return std::pow(sum, 1.0 / p);
}

double dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "dot");
    const float* x = a.data();
    const float* y = b.data();
    return chunked_reduce(a.numel(), [&](int64_t lo, int64_t hi) {
        double s = 0.0;
        for (int64_t i = lo; i < hi; ++i) s += static_cast<double>(x[i]) * static_cast<double>(y[i]);
        return s;
    });
}

Tensor project_onto(const Tensor& v, const Tensor& axis) {
    require_same_shape(v, axis, "project_onto");
    const double n2 = dot(axis, axis);
    if (n2 == 0.0) {
        fail(errc::zero_axis, "projection axis has zero norm");
    }
    return scale(axis, dot(v, axis) / n2);
}

Tensor axpy(double alpha, const Tensor& x, const Tensor& y) {
    require_same_shape(x, y, "axpy");
    Tensor out(x.shape());
    const float* xs = x.data();
    const float* ys = y.data();
    float* os = out.data();
    const int64_t n = x.numel();
#pragma omp parallel for num_threads(max_threads()) if (n >= kParallelGrain)
    for (int64_t i = 0; i < n; ++i) {
        os[i] = static_cast<float>(alpha * static_cast<double>(xs[i]) + static_cast<double>(ys[i]));
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return axpy(1.0, a, b); }

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    const int64_t n = a.numel();
    const float* xs = a.data();
    const float* ys = b.data();
    float* os = out.data();
#pragma omp parallel for num_threads(max_threads()) if (n >= kParallelGrain)
    for (int64_t i = 0; i < n; ++i) {
        os[i] = xs[i] - ys[i];
    }
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out(a.shape());
    const int64_t n = a.numel();
    const float* xs = a.data();
    float* os = out.data();
#pragma omp parallel for num_threads(max_threads()) if (n >= kParallelGrain)
    for (int64_t i = 0; i < n; ++i) {
        os[i] = static_cast<float>(s * static_cast<double>(xs[i]));
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        fail(errc::shape_mismatch, "matmul requires rank-2 tensors");
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        fail(errc::shape_mismatch, "matmul: " + a.shape_str() + " x " + b.shape_str());
    }
    Tensor out({m, n});
    const float* pa = a.data();
    const float* pb = b.data();
    float* pc = out.data();
#pragma omp parallel for num_threads(max_threads()) if (m * n * k >= kParallelGrain)
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t t = 0; t < k; ++t) {
                acc += static_cast<double>(pa[i * k + t]) * static_cast<double>(pb[t * n + j]);
            }
            pc[i * n + j] = static_cast<float>(acc);
        }
    }
    return out;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b)) return false;
    const float* x = a.data();
    const float* y = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) {
        if (__builtin_bit_cast(uint32_t, x[i]) != __builtin_bit_cast(uint32_t, y[i])) return false;
    }
    return true;
}

bool all_finite(const Tensor& t) {
    for (float v : t.values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace magic
