// Copyright (c) 2026 The MAGIC Authors
// SPDX-License-Identifier: Apache-2.0
//
// Serial reference kernels. Same arithmetic as the OpenMP versions in
// tensor.cpp (chunked double accumulation, kReductionChunk), executed on one
// thread. Tests assert bitwise agreement; bench_kernels compares speed.

#pragma once

#include "magic/tensor.hpp"

namespace magic::ref {

double lp_norm(const Tensor& t, int p);
double dot(const Tensor& a, const Tensor& b);
Tensor axpy(double alpha, const Tensor& x, const Tensor& y);
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace magic::ref
