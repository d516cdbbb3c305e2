// Copyright (c) 2026 The MAGIC Authors
// SPDX-License-Identifier: Apache-2.0
//
// MLP evaluation with per-layer activation capture, task features, the
// performance metrics behind sensitivity probing, and a plain-SGD trainer
// used to grow specialised models out of a shared base.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "magic/checkpoint.hpp"
#include "magic/tensor.hpp"

namespace magic {

struct FeatureTrace {
    std::vector<Tensor> per_layer;  // post-activation output of each layer, [B, out_dim]
    Tensor logits;                  // final pre-softmax output
};

// Per-layer feature deviation of one model against the shared base.
struct TaskFeature {
    std::vector<Tensor> per_layer;
    std::string input_id;
};

struct LabeledBatch {
    Tensor inputs;  // [B, input_dim]
    std::optional<std::vector<int>> labels;
    std::string task_id;

    int64_t size() const { return inputs.rank() == 2 ? inputs.dim(0) : 0; }
};

enum class MetricKind { accuracy, neg_xent, neg_entropy };

MetricKind metric_from_string(const std::string& s);
std::string to_string(MetricKind m);

FeatureTrace forward_with_trace(const ModelWeights& w, const ModelManifest& m, const Tensor& x);

// activation(x @ W + b) for one layer; bias may be null.
Tensor layer_forward(const Tensor& x, const Tensor& weight, const Tensor* bias, Activation act);

// Full-composition semantics: each model runs its own forward from the raw
// input; per_layer[l] = variant trace - base trace.
TaskFeature task_feature(const ModelWeights& pre, const ModelWeights& variant,
                         const ModelManifest& m, const Tensor& x);

// accuracy: fraction correct; neg_xent: -mean cross-entropy;
// neg_entropy: -mean Shannon entropy of the softmax outputs (label-free).
double performance_metric(const ModelWeights& w, const ModelManifest& m, const LabeledBatch& batch,
                          MetricKind kind);

double metric_from_logits(const Tensor& logits, const LabeledBatch& batch, MetricKind kind);

// Minibatch size used by train_specialist; the stream is pooled, reshuffled
// each epoch from (seed, epoch), and stepped in this granularity.
inline constexpr int64_t kTrainMinibatch = 32;

// Plain SGD with hand-derived backprop through the manifest layers and
// softmax cross-entropy loss. Deterministic for a fixed seed; epochs == 0
// returns pre unchanged. Throws DivergedLoss if the loss leaves the reals.
ModelWeights train_specialist(const ModelWeights& pre, const ModelManifest& m,
                              const std::vector<LabeledBatch>& data, int epochs, double lr,
                              uint64_t seed);

// Mean softmax cross-entropy over every sample in the stream.
double dataset_loss(const ModelWeights& w, const ModelManifest& m,
                    const std::vector<LabeledBatch>& data);

// Batch files are checkpoints with tensors "inputs" [B,D] and optional
// "labels" [B] (32-bit reals holding integers).
LabeledBatch load_batch(const std::string& path);
void save_batch(const LabeledBatch& batch, const std::string& path);

}  // namespace magic
