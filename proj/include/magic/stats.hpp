// Copyright (c) 2026 The MAGIC Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

namespace magic::stats {

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    int df = 0;
};

// Student's paired two-sided t-test on (after - before). If every difference
// is identical the statistic degenerates to +/-inf (p = 0) or 0 (p = 1).
TTestResult paired_ttest(std::span<const double> before, std::span<const double> after);

// Spearman rank correlation with average ranks on ties.
double spearman(std::span<const double> a, std::span<const double> b);

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

// Two-sided survival p for Student's t with df degrees of freedom.
double student_t_two_sided_p(double t, int df);

double mean(std::span<const double> xs);
double stddev(std::span<const double> xs);  // sample (n-1)

}  // namespace magic::stats
