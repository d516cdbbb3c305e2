// Copyright (c) 2026 The MAGIC Authors
// SPDX-License-Identifier: Apache-2.0
//
// Magnitude calibration of merged models.
//
// Merging shrinks (or otherwise distorts) the per-layer magnitude of the
// merged task vector and of the features it induces. This module measures
// per-layer sensitivity to magnitude scaling, selects the magnitude-sensitive
// layer set A, and repairs magnitudes in feature space (FSC), weight space
// (WSC) or both (DSC), guarding every coefficient with a conservative XOR
// gate: amplify only outside A, shrink only inside A.

#pragma once

#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "magic/merge.hpp"
#include "magic/network.hpp"

namespace magic {

struct SensitivityReport {
    std::vector<double> per_layer_s;  // metric(perturbed) - metric(base)
    double epsilon = 1.1;
    std::string metric_kind;
    std::string probe_batch_id;
};

struct CalibrationPlan {
    std::optional<std::vector<double>> xi_weight;   // post-gate, 1 where gated off
    std::optional<std::vector<double>> xi_feature;  // post-gate, 1 where gated off
    std::vector<double> xi_weight_raw;              // pre-gate estimates
    std::vector<double> xi_feature_raw;
    std::set<int> sensitive_set;
    int alpha = 0;
    std::vector<bool> gated_weight;   // true where the gate forced xi to 1
    std::vector<bool> gated_feature;
    std::vector<std::string> warnings;
};

// Feature-norm denominators below this are treated as degenerate; the layer
// keeps xi = 1 and a warning is recorded.
inline constexpr double kDegenerateFeatureNorm = 1e-12;

// s^l = P(model with layer-l delta scaled by epsilon) - P(base model), the
// model being recompose(pre, tv, lambda). Zero-delta layers and epsilon = 1
// give s^l = 0 exactly.
SensitivityReport layer_sensitivity(const TaskVector& tv, const ModelWeights& pre,
                                    const ModelManifest& m, const LabeledBatch& probe,
                                    double epsilon, MetricKind metric, double lambda);

// The alpha layers with the smallest s (largest degradation under
// amplification): A = { l : |{k : s^k < s^l}| < alpha }, ties broken toward
// the lower layer index so |A| == alpha always holds.
std::set<int> select_sensitive_layers(const SensitivityReport& report, int alpha);

// Conservative XOR gate: keep xi iff (xi > 1) differs from membership in A.
double gate(double xi, bool layer_in_A);

// Feature Space Calibration coefficients:
//   xi_f^l = (1/K) sum_k ||dh_k^l(x_k)|| / ||dh_merge^l(x_k)||
// with per-sample ratios averaged inside each task batch, then gated by A.
CalibrationPlan fsc_coefficients(const std::vector<std::pair<TaskVector, LabeledBatch>>& specialists,
                                 const ModelWeights& merged, const ModelWeights& pre,
                                 const ModelManifest& m, const std::set<int>& A);

// Calibrated forward pass, single-stream semantics: at each layer the
// calibrated activation feeds both parameter sets and the outputs mix as
//   a^l = h_pre + xi_f^l * (h_merge - h_pre).
// Layers with xi == 1 reproduce the plain merged forward bit for bit.
FeatureTrace forward_fsc(const ModelWeights& pre, const ModelWeights& merged,
                         const ModelManifest& m, const CalibrationPlan& plan, const Tensor& x);

// Weight Space Calibration coefficient for one layer. With projections of
// the merged layer onto each task axis and the residual r orthogonal to all
// of them,
//   S = sum_k ||proj_k||^2/||d_k||^2 + ||r||^2/Mbar^2,  Mbar = mean ||d_k||,
// the hyperellipsoid constraint S(xi * merged) = 1 gives xi_w = 1/sqrt(S).
// A zero merged layer yields xi = 1 plus a warning.
double wsc_coefficient(const Tensor& merged_layer, const std::vector<Tensor>& task_layers,
                       std::vector<std::string>* warnings = nullptr);

// merged_tv must carry the scale it is applied with (lambda folded in).
// Gated layers pass through untouched.
std::pair<TaskVector, CalibrationPlan> apply_wsc(const TaskVector& merged_tv,
                                                 const std::vector<TaskVector>& specialist_tvs,
                                                 const std::set<int>& A);

struct DscConfig {
    int alpha = 10;
    double epsilon = 1.1;
    double lambda = 0.3;
    MetricKind metric = MetricKind::neg_entropy;
};

// Dual Space Calibration: A from the sensitivity of the weight-averaged
// merge, then WSC on lambda * merged_tv, then FSC estimated on the
// WSC-calibrated model. The returned weights carry the WSC result; the plan's
// feature coefficients are meant for forward_fsc.
std::pair<ModelWeights, CalibrationPlan> apply_dsc(const ModelWeights& pre, const ModelManifest& m,
                                                   const TaskVector& merged_tv,
                                                   const std::vector<TaskVector>& specialist_tvs,
                                                   const std::vector<LabeledBatch>& specialist_batches,
                                                   const LabeledBatch& probe, const DscConfig& cfg);

// Minimiser of ||xi * (eta*dh_k + eps) - dh_k||^2:
//   xi* = (||dh_k||^2 eta - <dh_k, eps>) / (||dh_k||^2 eta^2 + ||eps||^2).
double optimal_scale_closed_form(const Tensor& dh_k, double eta, const Tensor& eps_vec);

// Per-layer {layer, xi_weight, xi_feature, in_A, gated} report.
nlohmann::json plan_to_json(const CalibrationPlan& plan);

}  // namespace magic
