// Copyright (c) 2026 The MAGIC Authors
// SPDX-License-Identifier: Apache-2.0

#include "magic/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "magic/errors.hpp"
#include "magic/parallel.hpp"

namespace magic {

SensitivityReport layer_sensitivity(const TaskVector& tv, const ModelWeights& pre,
                                    const ModelManifest& m, const LabeledBatch& probe,
                                    double epsilon, MetricKind metric, double lambda) {
    if (epsilon <= 0.0) {
        fail(errc::out_of_range, "epsilon must be positive");
    }
    SensitivityReport report;
    report.epsilon = epsilon;
    report.metric_kind = to_string(metric);
    report.probe_batch_id = probe.task_id;
    report.per_layer_s.assign(tv.per_layer.size(), 0.0);

    const ModelWeights base = recompose(pre, m, tv, lambda);
    const double base_metric = performance_metric(base, m, probe, metric);

    for (size_t l = 0; l < tv.per_layer.size(); ++l) {
        if (epsilon == 1.0 || lp_norm(tv.per_layer[l], 2) == 0.0) {
            continue;  // perturbed model is identical, s^l = 0 exactly
        }
        TaskVector perturbed = tv;
        perturbed.per_layer[l] = scale(tv.per_layer[l], epsilon);
        const ModelWeights scaled = recompose(pre, m, perturbed, lambda);
        report.per_layer_s[l] = performance_metric(scaled, m, probe, metric) - base_metric;
    }
    return report;
}

std::set<int> select_sensitive_layers(const SensitivityReport& report, int alpha) {
    const int L = static_cast<int>(report.per_layer_s.size());
    if (alpha < 0 || alpha > L) {
        fail(errc::out_of_range, "alpha must lie in [0, L]");
    }
    std::vector<int> order(static_cast<size_t>(L));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double sa = report.per_layer_s[static_cast<size_t>(a)];
        const double sb = report.per_layer_s[static_cast<size_t>(b)];
        return sa != sb ? sa < sb : a < b;
    });
    return {order.begin(), order.begin() + alpha};
}

double gate(double xi, bool layer_in_A) {
    if (xi <= 0.0) {
        fail(errc::out_of_range, "calibration coefficient must be positive");
    }
    return ((xi > 1.0) != layer_in_A) ? xi : 1.0;
}

CalibrationPlan fsc_coefficients(const std::vector<std::pair<TaskVector, LabeledBatch>>& specialists,
                                 const ModelWeights& merged, const ModelWeights& pre,
                                 const ModelManifest& m, const std::set<int>& A) {
    if (specialists.empty()) {
        fail(errc::empty_input, "fsc_coefficients needs at least one specialist");
    }
    const size_t L = m.layers.size();
    const size_t K = specialists.size();

    CalibrationPlan plan;
    plan.sensitive_set = A;
    plan.alpha = static_cast<int>(A.size());
    plan.xi_feature_raw.assign(L, 1.0);
    plan.gated_feature.assign(L, false);

    std::vector<double> ratio_sum(L, 0.0);
    std::vector<bool> degenerate(L, false);
    for (const auto& [tv, batch] : specialists) {
        if (batch.size() < 1) {
            fail(errc::empty_input, "calibration batch for '" + batch.task_id + "' is empty");
        }
        const ModelWeights specialist = recompose(pre, m, tv, 1.0);
        const TaskFeature dh_task = task_feature(pre, specialist, m, batch.inputs);
        const TaskFeature dh_merge = task_feature(pre, merged, m, batch.inputs);
        for (size_t l = 0; l < L; ++l) {
            const Tensor& task_f = dh_task.per_layer[l];
            const Tensor& merge_f = dh_merge.per_layer[l];
            const int64_t b = task_f.dim(0), dim = task_f.dim(1);
            double batch_ratio = 0.0;
            for (int64_t i = 0; i < b; ++i) {
                double tn = 0.0, mn = 0.0;
                for (int64_t j = 0; j < dim; ++j) {
                    tn += static_cast<double>(task_f[i * dim + j]) * task_f[i * dim + j];
                    mn += static_cast<double>(merge_f[i * dim + j]) * merge_f[i * dim + j];
                }
                tn = std::sqrt(tn);
                mn = std::sqrt(mn);
                if (mn < kDegenerateFeatureNorm) {
                    degenerate[l] = true;
                    break;
                }
                batch_ratio += tn / mn;
            }
            ratio_sum[l] += batch_ratio / static_cast<double>(b);
        }
    }

    std::vector<double> xi(L, 1.0);
    for (size_t l = 0; l < L; ++l) {
        if (degenerate[l]) {
            plan.warnings.push_back("layer " + std::to_string(l) +
                                    ": merged task feature below " +
                                    std::to_string(kDegenerateFeatureNorm) + ", skipped (xi=1)");
            continue;
        }
        plan.xi_feature_raw[l] = ratio_sum[l] / static_cast<double>(K);
        const double gated = gate(plan.xi_feature_raw[l], A.count(static_cast<int>(l)) != 0);
        plan.gated_feature[l] = gated != plan.xi_feature_raw[l];
        xi[l] = gated;
    }
    plan.xi_feature = std::move(xi);
    return plan;
}

FeatureTrace forward_fsc(const ModelWeights& pre, const ModelWeights& merged,
                         const ModelManifest& m, const CalibrationPlan& plan, const Tensor& x) {
    if (!plan.xi_feature) {
        fail(errc::missing_required, "plan carries no feature-space coefficients");
    }
    if (plan.xi_feature->size() != m.layers.size()) {
        fail(errc::shape_mismatch, "plan layer count does not match manifest");
    }
    FeatureTrace trace;
    trace.per_layer.reserve(m.layers.size());
    Tensor current = x;
    for (const auto& spec : m.layers) {
        ModelWeights single_pre, single_merged;  // reuse the plain forward for one layer
        ModelManifest single;
        single.input_dim = pre.at(spec.weight_name).dim(0);
        single.num_classes = pre.at(spec.weight_name).dim(1);
        LayerSpec only = spec;
        only.index = 0;
        single.layers.push_back(only);
        single_pre.tensors.emplace(spec.weight_name, pre.at(spec.weight_name));
        single_merged.tensors.emplace(spec.weight_name, merged.at(spec.weight_name));
        if (spec.bias_name) {
            single_pre.tensors.emplace(*spec.bias_name, pre.at(*spec.bias_name));
            single_merged.tensors.emplace(*spec.bias_name, merged.at(*spec.bias_name));
        }
        const double xi = (*plan.xi_feature)[static_cast<size_t>(spec.index)];
        Tensor h_merged = forward_with_trace(single_merged, single, current).per_layer[0];
        if (xi == 1.0) {
            current = std::move(h_merged);  // plain merged layer, bit for bit
        } else {
            Tensor h_pre = forward_with_trace(single_pre, single, current).per_layer[0];
            current = axpy(xi, sub(h_merged, h_pre), h_pre);
        }
        trace.per_layer.push_back(current);
    }
    trace.logits = trace.per_layer.back();
    return trace;
}

double wsc_coefficient(const Tensor& merged_layer, const std::vector<Tensor>& task_layers,
                       std::vector<std::string>* warnings) {
    if (task_layers.empty()) {
        fail(errc::empty_input, "wsc_coefficient needs at least one task layer");
    }
    double mbar = 0.0;
    std::vector<double> axis_norm2(task_layers.size());
    for (size_t k = 0; k < task_layers.size(); ++k) {
        axis_norm2[k] = dot(task_layers[k], task_layers[k]);
        if (axis_norm2[k] == 0.0) {
            fail(errc::zero_axis, "task layer " + std::to_string(k) + " is zero");
        }
        mbar += std::sqrt(axis_norm2[k]);
    }
    mbar /= static_cast<double>(task_layers.size());

    Tensor residual = merged_layer;
    double s = 0.0;
    for (size_t k = 0; k < task_layers.size(); ++k) {
        const Tensor proj = project_onto(merged_layer, task_layers[k]);
        s += dot(proj, proj) / axis_norm2[k];
        residual = sub(residual, proj);
    }
    const double res2 = dot(residual, residual);
    s += res2 / (mbar * mbar);

    if (s == 0.0) {
        if (warnings) {
            warnings->push_back("merged layer is zero, keeping xi=1");
        }
        return 1.0;
    }
    return 1.0 / std::sqrt(s);
}

std::pair<TaskVector, CalibrationPlan> apply_wsc(const TaskVector& merged_tv,
                                                 const std::vector<TaskVector>& specialist_tvs,
                                                 const std::set<int>& A) {
    if (specialist_tvs.empty()) {
        fail(errc::empty_input, "apply_wsc needs specialist task vectors");
    }
    for (const auto& tv : specialist_tvs) {
        if (tv.base_fingerprint != merged_tv.base_fingerprint) {
            fail(errc::base_mismatch, "specialists and merged vector use different bases");
        }
    }
    const size_t L = merged_tv.per_layer.size();
    CalibrationPlan plan;
    plan.sensitive_set = A;
    plan.alpha = static_cast<int>(A.size());
    plan.xi_weight_raw.assign(L, 1.0);
    plan.gated_weight.assign(L, false);
    std::vector<double> xi(L, 1.0);

    TaskVector out;
    out.base_fingerprint = merged_tv.base_fingerprint;
    out.per_layer.resize(L);
    for (size_t l = 0; l < L; ++l) {
        std::vector<Tensor> axes;
        axes.reserve(specialist_tvs.size());
        for (const auto& tv : specialist_tvs) axes.push_back(tv.per_layer[l]);
        plan.xi_weight_raw[l] = wsc_coefficient(merged_tv.per_layer[l], axes, &plan.warnings);
        const double gated = gate(plan.xi_weight_raw[l], A.count(static_cast<int>(l)) != 0);
        plan.gated_weight[l] = gated != plan.xi_weight_raw[l];
        xi[l] = gated;
        out.per_layer[l] = gated == 1.0 ? merged_tv.per_layer[l] : scale(merged_tv.per_layer[l], gated);
    }
    plan.xi_weight = std::move(xi);
    return {std::move(out), std::move(plan)};
}

std::pair<ModelWeights, CalibrationPlan> apply_dsc(const ModelWeights& pre, const ModelManifest& m,
                                                   const TaskVector& merged_tv,
                                                   const std::vector<TaskVector>& specialist_tvs,
                                                   const std::vector<LabeledBatch>& specialist_batches,
                                                   const LabeledBatch& probe, const DscConfig& cfg) {
    if (specialist_tvs.size() != specialist_batches.size()) {
        fail(errc::shape_mismatch, "one calibration batch per specialist required");
    }
    if (probe.size() < 1) {
        fail(errc::empty_input, "sensitivity probe batch is empty");
    }

    // Sensitivity of the weight-averaged merge; that model is pre + mean(tv),
    // so lambda here is 1 regardless of the pipeline lambda.
    const TaskVector avg = merge_average(specialist_tvs);
    const SensitivityReport report =
        layer_sensitivity(avg, pre, m, probe, cfg.epsilon, cfg.metric, 1.0);
    const int alpha = std::min(cfg.alpha, static_cast<int>(m.layers.size()));
    const std::set<int> A = select_sensitive_layers(report, alpha);

    auto [calibrated_tv, weight_plan] =
        apply_wsc(scale_task_vector(merged_tv, cfg.lambda), specialist_tvs, A);
    ModelWeights model = recompose(pre, m, calibrated_tv, 1.0);

    std::vector<std::pair<TaskVector, LabeledBatch>> specialists;
    specialists.reserve(specialist_tvs.size());
    for (size_t k = 0; k < specialist_tvs.size(); ++k) {
        specialists.emplace_back(specialist_tvs[k], specialist_batches[k]);
    }
    CalibrationPlan plan = fsc_coefficients(specialists, model, pre, m, A);

    plan.xi_weight = weight_plan.xi_weight;
    plan.xi_weight_raw = weight_plan.xi_weight_raw;
    plan.gated_weight = weight_plan.gated_weight;
    plan.alpha = cfg.alpha;
    plan.warnings.insert(plan.warnings.begin(), weight_plan.warnings.begin(),
                         weight_plan.warnings.end());
    return {std::move(model), std::move(plan)};
}

double optimal_scale_closed_form(const Tensor& dh_k, double eta, const Tensor& eps_vec) {
    const double n2 = dot(dh_k, dh_k);
    const double e2 = dot(eps_vec, eps_vec);
    if (n2 == 0.0 && e2 == 0.0) {
        fail(errc::degenerate_input, "both the task feature and the residual are zero");
    }
    const double denom = n2 * eta * eta + e2;
    if (denom == 0.0) {
        fail(errc::degenerate_input, "loss is constant in the scale coefficient");
    }
    return (n2 * eta - dot(dh_k, eps_vec)) / denom;
}

nlohmann::json plan_to_json(const CalibrationPlan& plan) {
    nlohmann::json doc;
    doc["alpha"] = plan.alpha;
    doc["sensitive_set"] = plan.sensitive_set;
    const size_t L = std::max(plan.xi_weight ? plan.xi_weight->size() : 0,
                              plan.xi_feature ? plan.xi_feature->size() : 0);
    nlohmann::json layers = nlohmann::json::array();
    for (size_t l = 0; l < L; ++l) {
        nlohmann::json row;
        row["layer"] = l;
        row["xi_weight"] = plan.xi_weight ? (*plan.xi_weight)[l] : 1.0;
        row["xi_feature"] = plan.xi_feature ? (*plan.xi_feature)[l] : 1.0;
        row["in_A"] = plan.sensitive_set.count(static_cast<int>(l)) != 0;
        const bool gw = l < plan.gated_weight.size() && plan.gated_weight[l];
        const bool gf = l < plan.gated_feature.size() && plan.gated_feature[l];
        row["gated"] = gw || gf;
        layers.push_back(std::move(row));
    }
    doc["layers"] = std::move(layers);
    if (!plan.warnings.empty()) {
        doc["warnings"] = plan.warnings;
    }
    return doc;
}

}  // namespace magic
