// Copyright (c) 2026 The MAGIC Authors
// SPDX-License-Identifier: Apache-2.0
//
// Task vectors and the merge operators the calibrator repairs: weight
// averaging, task arithmetic, TIES (trim / elect sign / disjoint mean) and
// DARE (drop-and-rescale). Operators return an unscaled merged TaskVector;
// the merge coefficient lambda is applied only in recompose.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "magic/checkpoint.hpp"
#include "magic/tensor.hpp"

namespace magic {

// Per-layer weight deltas. per_layer[l] is the flattened weight delta
// concatenated with the bias delta of manifest layer l.
struct TaskVector {
    std::vector<Tensor> per_layer;
    uint64_t base_fingerprint = 0;

    int num_layers() const { return static_cast<int>(per_layer.size()); }
};

enum class MergeMethod { average, task_arithmetic, ties, dare };

MergeMethod merge_method_from_string(const std::string& s);
std::string to_string(MergeMethod m);

struct MergeConfig {
    MergeMethod method = MergeMethod::task_arithmetic;
    double lambda = 0.3;
    double ties_keep_fraction = 0.2;
    double dare_drop_prob = 0.5;
    uint64_t seed = 0;
};

// FNV-1a over names, shapes and raw payload; identifies the shared base.
uint64_t fingerprint(const ModelWeights& w);

TaskVector task_vector(const ModelWeights& pre, const ModelWeights& tuned, const ModelManifest& m);

// theta_pre + lambda * tv, layer by layer. Tensors outside the manifest are
// copied through unchanged.
ModelWeights recompose(const ModelWeights& pre, const ModelManifest& m, const TaskVector& tv,
                       double lambda);

TaskVector merge_average(const std::vector<TaskVector>& tvs);
TaskVector merge_task_arithmetic(const std::vector<TaskVector>& tvs);

// keep_fraction in (0,1]. Per layer: zero all but the top ceil(f*n) entries
// of each task vector by |value| (ties to the lower flat index), elect the
// per-coordinate sign of the trimmed sum, then average the task values whose
// sign matches (0 if none).
TaskVector merge_ties(const std::vector<TaskVector>& tvs, double keep_fraction);

// Zero each coordinate independently with probability drop_prob, rescale
// survivors by 1/(1-drop_prob), then sum across tasks. The mask stream is
// derived from (seed, task, layer) so parallel execution stays deterministic.
TaskVector merge_dare(const std::vector<TaskVector>& tvs, double drop_prob, uint64_t seed);

TaskVector merge(const std::vector<TaskVector>& tvs, const MergeConfig& cfg);

// Elementwise helpers preserving the base fingerprint.
TaskVector scale_task_vector(const TaskVector& tv, double s);

// TIES step 1 alone, exposed for the magnitude diagnostics.
TaskVector ties_trim(const TaskVector& tv, double keep_fraction);

}  // namespace magic
