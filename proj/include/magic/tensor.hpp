// Copyright (c) 2026 The MAGIC Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace magic {

/// Dense row-major tensor of 32-bit reals. All reductions accumulate in
/// double; cross-tensor ops require exact shape equality except matmul.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::vector<int64_t> shape, std::vector<float> data);

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor identity(int64_t n);

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<const float> values() const { return data_; }
    std::span<float> values() { return data_; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }

    std::string shape_str() const;

private:
    std::vector<int64_t> shape_;
    std::vector<float> data_;
};

// (sum_i |x_i|^p)^(1/p) over all elements, flattened. Requires p >= 1.
double lp_norm(const Tensor& t, int p);

// <a, b> over flattened elements; shapes must match exactly.
double dot(const Tensor& a, const Tensor& b);

// (<v,axis> / ||axis||^2) * axis, both treated as flat vectors.
Tensor project_onto(const Tensor& v, const Tensor& axis);

// alpha*x + y elementwise.
Tensor axpy(double alpha, const Tensor& x, const Tensor& y);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// Standard product of rank-2 tensors, [M,K] x [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);

bool same_shape(const Tensor& a, const Tensor& b);
bool bitwise_equal(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

}  // namespace magic
