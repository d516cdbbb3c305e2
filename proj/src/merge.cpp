// Copyright (c) 2026 The MAGIC Authors
// SPDX-License-Identifier: Apache-2.0

#include "magic/merge.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "magic/errors.hpp"
#include "magic/parallel.hpp"
#include "magic/rng.hpp"

namespace magic {

MergeMethod merge_method_from_string(const std::string& s) {
    if (s == "average") return MergeMethod::average;
    if (s == "task_arithmetic") return MergeMethod::task_arithmetic;
    if (s == "ties") return MergeMethod::ties;
    if (s == "dare") return MergeMethod::dare;
    fail(errc::out_of_range, "unknown merge method '" + s + "'");
}

std::string to_string(MergeMethod m) {
    switch (m) {
        case MergeMethod::average: return "average";
        case MergeMethod::task_arithmetic: return "task_arithmetic";
        case MergeMethod::ties: return "ties";
        case MergeMethod::dare: return "dare";
    }
    return "task_arithmetic";
}

uint64_t fingerprint(const ModelWeights& w) {
    uint64_t h = 0xCBF29CE484222325ull;
    auto feed = [&h](const void* bytes, size_t n) {
        const uint8_t* p = static_cast<const uint8_t*>(bytes);
        for (size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001B3ull;
        }
    };
    for (const auto& [name, t] : w.tensors) {
        feed(name.data(), name.size());
        for (int64_t d : t.shape()) feed(&d, sizeof(d));
        feed(t.data(), static_cast<size_t>(t.numel()) * sizeof(float));
    }
    return h;
}

namespace {

// Flattened [weight | bias] length of a manifest layer.
int64_t layer_numel(const ModelManifest& m, const ModelWeights& w, int l) {
    const auto& spec = m.layers[static_cast<size_t>(l)];
    int64_t n = w.at(spec.weight_name).numel();
    if (spec.bias_name) n += w.at(*spec.bias_name).numel();
    return n;
}

void check_common_structure(const std::vector<TaskVector>& tvs, const char* op) {
    if (tvs.empty()) {
        fail(errc::empty_input, std::string(op) + " needs at least one task vector");
    }
    for (const auto& tv : tvs) {
        if (tv.base_fingerprint != tvs.front().base_fingerprint) {
            fail(errc::base_mismatch, std::string(op) + ": task vectors built from different bases");
        }
        if (tv.num_layers() != tvs.front().num_layers()) {
            fail(errc::shape_mismatch, std::string(op) + ": layer counts differ");
        }
        for (int l = 0; l < tv.num_layers(); ++l) {
            if (!same_shape(tv.per_layer[static_cast<size_t>(l)],
                            tvs.front().per_layer[static_cast<size_t>(l)])) {
                fail(errc::shape_mismatch, std::string(op) + ": layer " + std::to_string(l));
            }
        }
    }
}

}  // namespace

TaskVector task_vector(const ModelWeights& pre, const ModelWeights& tuned, const ModelManifest& m) {
    validate_manifest(m, pre);
    validate_manifest(m, tuned);
    TaskVector tv;
    tv.base_fingerprint = fingerprint(pre);
    for (const auto& spec : m.layers) {
        const Tensor& wp = pre.at(spec.weight_name);
        const Tensor& wt = tuned.at(spec.weight_name);
        if (!same_shape(wp, wt)) {
            fail(errc::shape_mismatch, "weight '" + spec.weight_name + "'");
        }
        Tensor flat({layer_numel(m, pre, spec.index)});
        int64_t at = 0;
        for (int64_t i = 0; i < wp.numel(); ++i) flat[at++] = wt[i] - wp[i];
        if (spec.bias_name) {
            const Tensor& bp = pre.at(*spec.bias_name);
            const Tensor& bt = tuned.at(*spec.bias_name);
            if (!same_shape(bp, bt)) {
                fail(errc::shape_mismatch, "bias '" + *spec.bias_name + "'");
            }
            for (int64_t i = 0; i < bp.numel(); ++i) flat[at++] = bt[i] - bp[i];
        }
        tv.per_layer.push_back(std::move(flat));
    }
    return tv;
}

ModelWeights recompose(const ModelWeights& pre, const ModelManifest& m, const TaskVector& tv,
                       double lambda) {
    if (tv.base_fingerprint != fingerprint(pre)) {
        fail(errc::base_mismatch, "task vector was built from a different base model");
    }
    if (tv.num_layers() != m.num_layers()) {
        fail(errc::shape_mismatch, "task vector layer count does not match manifest");
    }
    ModelWeights out = pre;
    for (const auto& spec : m.layers) {
        const Tensor& delta = tv.per_layer[static_cast<size_t>(spec.index)];
        if (delta.numel() != layer_numel(m, pre, spec.index)) {
            fail(errc::shape_mismatch, "layer " + std::to_string(spec.index) + " delta length");
        }
        Tensor& weight = out.tensors[spec.weight_name];
        int64_t at = 0;
        for (int64_t i = 0; i < weight.numel(); ++i, ++at) {
            weight[i] = static_cast<float>(static_cast<double>(weight[i]) +
                                           lambda * static_cast<double>(delta[at]));
        }
        if (spec.bias_name) {
            Tensor& bias = out.tensors[*spec.bias_name];
            for (int64_t i = 0; i < bias.numel(); ++i, ++at) {
                bias[i] = static_cast<float>(static_cast<double>(bias[i]) +
                                             lambda * static_cast<double>(delta[at]));
            }
        }
    }
    return out;
}

TaskVector merge_average(const std::vector<TaskVector>& tvs) {
    check_common_structure(tvs, "merge_average");
    const size_t K = tvs.size();
    TaskVector out;
    out.base_fingerprint = tvs.front().base_fingerprint;
    for (int l = 0; l < tvs.front().num_layers(); ++l) {
        const int64_t n = tvs.front().per_layer[static_cast<size_t>(l)].numel();
        Tensor mean(tvs.front().per_layer[static_cast<size_t>(l)].shape());
#pragma omp parallel for num_threads(max_threads()) if (n >= kParallelGrain)
        for (int64_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (size_t k = 0; k < K; ++k) acc += tvs[k].per_layer[static_cast<size_t>(l)][i];
            mean[i] = static_cast<float>(acc / static_cast<double>(K));
        }
        out.per_layer.push_back(std::move(mean));
    }
    return out;
}

TaskVector merge_task_arithmetic(const std::vector<TaskVector>& tvs) {
    check_common_structure(tvs, "merge_task_arithmetic");
    TaskVector out;
    out.base_fingerprint = tvs.front().base_fingerprint;
    for (int l = 0; l < tvs.front().num_layers(); ++l) {
        const int64_t n = tvs.front().per_layer[static_cast<size_t>(l)].numel();
        Tensor sum(tvs.front().per_layer[static_cast<size_t>(l)].shape());
#pragma omp parallel for num_threads(max_threads()) if (n >= kParallelGrain)
        for (int64_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (const auto& tv : tvs) acc += tv.per_layer[static_cast<size_t>(l)][i];
            sum[i] = static_cast<float>(acc);
        }
        out.per_layer.push_back(std::move(sum));
    }
    return out;
}

namespace {

Tensor trim_layer(const Tensor& layer, double keep_fraction) {
    const int64_t n = layer.numel();
    const int64_t keep = static_cast<int64_t>(std::ceil(keep_fraction * static_cast<double>(n)));
    if (keep >= n) return layer;
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), int64_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        return std::abs(layer[a]) > std::abs(layer[b]);
    });
    Tensor out(layer.shape());
    for (int64_t i = 0; i < keep; ++i) {
        out[idx[static_cast<size_t>(i)]] = layer[idx[static_cast<size_t>(i)]];
    }
    return out;
}

}  // namespace

TaskVector ties_trim(const TaskVector& tv, double keep_fraction) {
    if (keep_fraction <= 0.0 || keep_fraction > 1.0) {
        fail(errc::out_of_range, "keep_fraction must lie in (0,1]");
    }
    TaskVector out;
    out.base_fingerprint = tv.base_fingerprint;
    for (const auto& layer : tv.per_layer) {
        out.per_layer.push_back(trim_layer(layer, keep_fraction));
    }
    return out;
}

TaskVector merge_ties(const std::vector<TaskVector>& tvs, double keep_fraction) {
    check_common_structure(tvs, "merge_ties");
    if (keep_fraction <= 0.0 || keep_fraction > 1.0) {
        fail(errc::out_of_range, "keep_fraction must lie in (0,1]");
    }
    std::vector<TaskVector> trimmed;
    trimmed.reserve(tvs.size());
    for (const auto& tv : tvs) trimmed.push_back(ties_trim(tv, keep_fraction));

    TaskVector out;
    out.base_fingerprint = tvs.front().base_fingerprint;
    for (int l = 0; l < tvs.front().num_layers(); ++l) {
        const int64_t n = tvs.front().per_layer[static_cast<size_t>(l)].numel();
        Tensor merged(tvs.front().per_layer[static_cast<size_t>(l)].shape());
#pragma omp parallel for num_threads(max_threads()) if (n >= kParallelGrain)
        for (int64_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (const auto& tv : trimmed) sum += tv.per_layer[static_cast<size_t>(l)][i];
            const int elected = sum > 0.0 ? 1 : (sum < 0.0 ? -1 : 0);
            if (elected == 0) {
                merged[i] = 0.0f;
                continue;
            }
            double acc = 0.0;
            int64_t count = 0;
            for (const auto& tv : trimmed) {
                const float v = tv.per_layer[static_cast<size_t>(l)][i];
                if ((elected > 0 && v > 0.0f) || (elected < 0 && v < 0.0f)) {
                    acc += v;
                    ++count;
                }
            }
            merged[i] = count ? static_cast<float>(acc / static_cast<double>(count)) : 0.0f;
        }
        out.per_layer.push_back(std::move(merged));
    }
    return out;
}

TaskVector merge_dare(const std::vector<TaskVector>& tvs, double drop_prob, uint64_t seed) {
    check_common_structure(tvs, "merge_dare");
    if (drop_prob < 0.0 || drop_prob >= 1.0) {
        fail(errc::out_of_range, "drop_prob must lie in [0,1)");
    }
    const double rescale = 1.0 / (1.0 - drop_prob);
    TaskVector out;
    out.base_fingerprint = tvs.front().base_fingerprint;
    for (int l = 0; l < tvs.front().num_layers(); ++l) {
        const int64_t n = tvs.front().per_layer[static_cast<size_t>(l)].numel();
        Tensor sum(tvs.front().per_layer[static_cast<size_t>(l)].shape());
        // One mask stream per (task, layer); streams are independent, so the
        // task loop could fan out without changing the result.
        std::vector<std::vector<float>> kept(tvs.size());
        for (size_t k = 0; k < tvs.size(); ++k) {
            Rng rng(mix_seed(seed, k, static_cast<uint64_t>(l)));
            auto& vals = kept[k];
            vals.resize(static_cast<size_t>(n));
            const Tensor& layer = tvs[k].per_layer[static_cast<size_t>(l)];
            for (int64_t i = 0; i < n; ++i) {
                const bool drop = rng.uniform() < drop_prob;
                vals[static_cast<size_t>(i)] =
                    drop ? 0.0f : static_cast<float>(rescale * static_cast<double>(layer[i]));
            }
        }
#pragma omp parallel for num_threads(max_threads()) if (n >= kParallelGrain)
        for (int64_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (size_t k = 0; k < tvs.size(); ++k) acc += kept[k][static_cast<size_t>(i)];
            sum[i] = static_cast<float>(acc);
        }
        out.per_layer.push_back(std::move(sum));
    }
    return out;
}

TaskVector merge(const std::vector<TaskVector>& tvs, const MergeConfig& cfg) {
    switch (cfg.method) {
        case MergeMethod::average: return merge_average(tvs);
        case MergeMethod::task_arithmetic: return merge_task_arithmetic(tvs);
        case MergeMethod::ties: return merge_ties(tvs, cfg.ties_keep_fraction);
        case MergeMethod::dare: return merge_dare(tvs, cfg.dare_drop_prob, cfg.seed);
    }
    fail(errc::out_of_range, "unhandled merge method");
}

TaskVector scale_task_vector(const TaskVector& tv, double s) {
    TaskVector out;
    out.base_fingerprint = tv.base_fingerprint;
    for (const auto& layer : tv.per_layer) out.per_layer.push_back(scale(layer, s));
    return out;
}

}  // namespace magic
