// Copyright (c) 2026 The MAGIC Authors
// SPDX-License-Identifier: Apache-2.0

#include "magic/network.hpp"

#include <cmath>
#include <numeric>

#include "magic/errors.hpp"
#include "magic/parallel.hpp"
#include "magic/rng.hpp"

namespace magic {

MetricKind metric_from_string(const std::string& s) {
    if (s == "accuracy") return MetricKind::accuracy;
    if (s == "neg_xent") return MetricKind::neg_xent;
    if (s == "neg_entropy") return MetricKind::neg_entropy;
    fail(errc::out_of_range, "unknown metric '" + s + "'");
}

std::string to_string(MetricKind m) {
    switch (m) {
        case MetricKind::accuracy: return "accuracy";
        case MetricKind::neg_xent: return "neg_xent";
        case MetricKind::neg_entropy: return "neg_entropy";
    }
    return "neg_entropy";
}

namespace {

double activate(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::gelu: return 0.5 * z * (1.0 + std::erf(z / std::numbers::sqrt2));
        case Activation::tanh: return std::tanh(z);
        case Activation::none: return z;
    }
    return z;
}

double activate_grad(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::gelu: {
            const double cdf = 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2));
            const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + z * pdf;
        }
        case Activation::tanh: {
            const double t = std::tanh(z);
            return 1.0 - t * t;
        }
        case Activation::none: return 1.0;
    }
    return 1.0;
}

// z = x @ W + b, accumulated in double before the f32 store.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b) {
    const int64_t batch = x.dim(0), in = x.dim(1), out = w.dim(1);
    if (w.dim(0) != in) {
        fail(errc::shape_mismatch, "linear: input " + x.shape_str() + " vs weight " + w.shape_str());
    }
    Tensor z({batch, out});
    const float* px = x.data();
    const float* pw = w.data();
    const float* pb = b ? b->data() : nullptr;
    float* pz = z.data();
#pragma omp parallel for num_threads(max_threads()) if (batch * in * out >= kParallelGrain)
    for (int64_t i = 0; i < batch; ++i) {
        for (int64_t j = 0; j < out; ++j) {
            double acc = pb ? static_cast<double>(pb[j]) : 0.0;
            for (int64_t k = 0; k < in; ++k) {
                acc += static_cast<double>(px[i * in + k]) * static_cast<double>(pw[k * out + j]);
            }
            pz[i * out + j] = static_cast<float>(acc);
        }
    }
    return z;
}

Tensor apply_activation(Activation a, const Tensor& z) {
    if (a == Activation::none) return z;
    Tensor out(z.shape());
    const int64_t n = z.numel();
    const float* pz = z.data();
    float* po = out.data();
#pragma omp parallel for num_threads(max_threads()) if (n >= kParallelGrain)
    for (int64_t i = 0; i < n; ++i) {
        po[i] = static_cast<float>(activate(a, static_cast<double>(pz[i])));
    }
    return out;
}

void check_input(const ModelManifest& m, const Tensor& x) {
    if (x.rank() != 2 || x.dim(1) != m.input_dim) {
        fail(errc::shape_mismatch,
             "input " + x.shape_str() + " does not match input_dim " + std::to_string(m.input_dim));
    }
}

// Row-wise log-softmax in double.
std::vector<double> row_log_softmax(const float* logits, int64_t c) {
    double max = logits[0];
    for (int64_t j = 1; j < c; ++j) max = std::max(max, static_cast<double>(logits[j]));
    double lse = 0.0;
    for (int64_t j = 0; j < c; ++j) lse += std::exp(static_cast<double>(logits[j]) - max);
    lse = std::log(lse) + max;
    std::vector<double> out(static_cast<size_t>(c));
    for (int64_t j = 0; j < c; ++j) out[static_cast<size_t>(j)] = static_cast<double>(logits[j]) - lse;
    return out;
}

}  // namespace

Tensor layer_forward(const Tensor& x, const Tensor& weight, const Tensor* bias, Activation act) {
    return apply_activation(act, linear(x, weight, bias));
}

FeatureTrace forward_with_trace(const ModelWeights& w, const ModelManifest& m, const Tensor& x) {
    check_input(m, x);
    FeatureTrace trace;
    trace.per_layer.reserve(m.layers.size());
    const Tensor* current = &x;
    for (const auto& layer : m.layers) {
        const Tensor& weight = w.at(layer.weight_name);
        const Tensor* bias = layer.bias_name ? &w.at(*layer.bias_name) : nullptr;
        trace.per_layer.push_back(layer_forward(*current, weight, bias, layer.activation));
        current = &trace.per_layer.back();
    }
    trace.logits = trace.per_layer.back();
    return trace;
}

TaskFeature task_feature(const ModelWeights& pre, const ModelWeights& variant,
                         const ModelManifest& m, const Tensor& x) {
    const FeatureTrace base = forward_with_trace(pre, m, x);
    const FeatureTrace var = forward_with_trace(variant, m, x);
    TaskFeature tf;
    tf.per_layer.reserve(base.per_layer.size());
    for (size_t l = 0; l < base.per_layer.size(); ++l) {
        tf.per_layer.push_back(sub(var.per_layer[l], base.per_layer[l]));
    }
    return tf;
}

double metric_from_logits(const Tensor& logits, const LabeledBatch& batch, MetricKind kind) {
    const int64_t b = logits.dim(0), c = logits.dim(1);
    if (kind != MetricKind::neg_entropy) {
        if (!batch.labels) {
            fail(errc::missing_labels, to_string(kind) + " requires labels");
        }
        if (static_cast<int64_t>(batch.labels->size()) != b) {
            fail(errc::shape_mismatch, "label count does not match batch size");
        }
    }
    double total = 0.0;
    for (int64_t i = 0; i < b; ++i) {
        const float* row = logits.data() + i * c;
        switch (kind) {
            case MetricKind::accuracy: {
                int64_t best = 0;
                for (int64_t j = 1; j < c; ++j) {
                    if (row[j] > row[best]) best = j;
                }
                total += (best == (*batch.labels)[static_cast<size_t>(i)]) ? 1.0 : 0.0;
                break;
            }
            case MetricKind::neg_xent: {
                const int label = (*batch.labels)[static_cast<size_t>(i)];
                if (label < 0 || label >= c) {
                    fail(errc::out_of_range, "label " + std::to_string(label) + " outside [0," +
                                                 std::to_string(c) + ")");
                }
                total += row_log_softmax(row, c)[static_cast<size_t>(label)];
                break;
            }
            case MetricKind::neg_entropy: {
                const auto logp = row_log_softmax(row, c);
                double h = 0.0;
                for (double lp : logp) h += std::exp(lp) * lp;
                total += h;  // sum p*log p == -entropy
                break;
            }
        }
    }
    return total / static_cast<double>(b);
}

double performance_metric(const ModelWeights& w, const ModelManifest& m, const LabeledBatch& batch,
                          MetricKind kind) {
    check_input(m, batch.inputs);
    const FeatureTrace trace = forward_with_trace(w, m, batch.inputs);
    return metric_from_logits(trace.logits, batch, kind);
}

namespace {

struct Layer {
    Tensor weight;
    Tensor bias;  // numel 0 when absent
    Activation activation;
};

struct Sample {
    const float* x;
    int label;
};

// One SGD step on a slice of samples; returns the minibatch loss.
double sgd_step(std::vector<Layer>& layers, const std::vector<Sample>& mb, int64_t in_dim,
                double lr) {
    const int64_t b = static_cast<int64_t>(mb.size());
    Tensor x({b, in_dim});
    for (int64_t i = 0; i < b; ++i) {
        std::copy(mb[static_cast<size_t>(i)].x, mb[static_cast<size_t>(i)].x + in_dim,
                  x.data() + i * in_dim);
    }

    const size_t depth = layers.size();
    std::vector<Tensor> pre(depth);   // z^l
    std::vector<Tensor> post(depth);  // a^l
    const Tensor* current = &x;
    for (size_t l = 0; l < depth; ++l) {
        pre[l] = linear(*current, layers[l].weight, layers[l].bias.numel() ? &layers[l].bias : nullptr);
        post[l] = apply_activation(layers[l].activation, pre[l]);
        current = &post[l];
    }

    const Tensor& logits = post.back();
    const int64_t c = logits.dim(1);
    double loss = 0.0;
    Tensor grad({b, c});  // dL/da^L
    for (int64_t i = 0; i < b; ++i) {
        const auto logp = row_log_softmax(logits.data() + i * c, c);
        const int label = mb[static_cast<size_t>(i)].label;
        loss -= logp[static_cast<size_t>(label)];
        for (int64_t j = 0; j < c; ++j) {
            const double p = std::exp(logp[static_cast<size_t>(j)]);
            grad[i * c + j] =
                static_cast<float>((p - (j == label ? 1.0 : 0.0)) / static_cast<double>(b));
        }
    }
    loss /= static_cast<double>(b);

    for (size_t l = depth; l-- > 0;) {
        Layer& layer = layers[l];
        const int64_t out = layer.weight.dim(1), in = layer.weight.dim(0);
        // dL/dz = dL/da * act'(z)
        Tensor gz({b, out});
        for (int64_t i = 0; i < b * out; ++i) {
            gz[i] = static_cast<float>(static_cast<double>(grad[i]) *
                                       activate_grad(layer.activation, static_cast<double>(pre[l][i])));
        }
        const Tensor& input = (l == 0) ? x : post[l - 1];
        if (l > 0) {
            // dL/da^{l-1} = gz @ W^T
            Tensor gprev({b, in});
            for (int64_t i = 0; i < b; ++i) {
                for (int64_t k = 0; k < in; ++k) {
                    double acc = 0.0;
                    for (int64_t j = 0; j < out; ++j) {
                        acc += static_cast<double>(gz[i * out + j]) *
                               static_cast<double>(layer.weight[k * out + j]);
                    }
                    gprev[i * in + k] = static_cast<float>(acc);
                }
            }
            grad = std::move(gprev);
        }
        // W -= lr * x^T gz ; b -= lr * colsum(gz)
        for (int64_t k = 0; k < in; ++k) {
            for (int64_t j = 0; j < out; ++j) {
                double acc = 0.0;
                for (int64_t i = 0; i < b; ++i) {
                    acc += static_cast<double>(input[i * in + k]) * static_cast<double>(gz[i * out + j]);
                }
                layer.weight[k * out + j] =
                    static_cast<float>(static_cast<double>(layer.weight[k * out + j]) - lr * acc);
            }
        }
        if (layer.bias.numel()) {
            for (int64_t j = 0; j < out; ++j) {
                double acc = 0.0;
                for (int64_t i = 0; i < b; ++i) acc += static_cast<double>(gz[i * out + j]);
                layer.bias[j] = static_cast<float>(static_cast<double>(layer.bias[j]) - lr * acc);
            }
        }
    }
    return loss;
}

}  // namespace

ModelWeights train_specialist(const ModelWeights& pre, const ModelManifest& m,
                              const std::vector<LabeledBatch>& data, int epochs, double lr,
                              uint64_t seed) {
    if (epochs < 0) {
        fail(errc::out_of_range, "epochs must be >= 0");
    }
    ModelWeights result = pre;
    if (epochs == 0) return result;

    std::vector<Sample> pool;
    for (const auto& batch : data) {
        check_input(m, batch.inputs);
        if (!batch.labels) {
            fail(errc::missing_labels, "training batches need labels");
        }
        for (int64_t i = 0; i < batch.size(); ++i) {
            const int label = (*batch.labels)[static_cast<size_t>(i)];
            if (label < 0 || label >= m.num_classes) {
                fail(errc::out_of_range, "training label out of range");
            }
            pool.push_back({batch.inputs.data() + i * m.input_dim, label});
        }
    }
    if (pool.empty()) {
        fail(errc::empty_input, "no training samples");
    }

    std::vector<Layer> layers;
    for (const auto& spec : m.layers) {
        Layer layer;
        layer.weight = result.at(spec.weight_name);
        layer.bias = spec.bias_name ? result.at(*spec.bias_name) : Tensor();
        layer.activation = spec.activation;
        layers.push_back(std::move(layer));
    }

    std::vector<size_t> order(pool.size());
    std::iota(order.begin(), order.end(), size_t{0});
    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng rng(mix_seed(seed, static_cast<uint64_t>(epoch)));
        rng.shuffle(order);
        double epoch_loss = 0.0;
        int64_t steps = 0;
        for (size_t start = 0; start < order.size(); start += kTrainMinibatch) {
            std::vector<Sample> mb;
            for (size_t i = start; i < std::min(order.size(), start + kTrainMinibatch); ++i) {
                mb.push_back(pool[order[i]]);
            }
            epoch_loss += sgd_step(layers, mb, m.input_dim, lr);
            ++steps;
        }
        if (!std::isfinite(epoch_loss / static_cast<double>(steps))) {
            fail(errc::diverged_loss, "loss became non-finite at epoch " + std::to_string(epoch));
        }
    }

    for (size_t l = 0; l < m.layers.size(); ++l) {
        result.tensors[m.layers[l].weight_name] = layers[l].weight;
        if (m.layers[l].bias_name) {
            result.tensors[*m.layers[l].bias_name] = layers[l].bias;
        }
    }
    return result;
}

double dataset_loss(const ModelWeights& w, const ModelManifest& m,
                    const std::vector<LabeledBatch>& data) {
    double total = 0.0;
    int64_t count = 0;
    for (const auto& batch : data) {
        total += -performance_metric(w, m, batch, MetricKind::neg_xent) *
                 static_cast<double>(batch.size());
        count += batch.size();
    }
    return total / static_cast<double>(count);
}

LabeledBatch load_batch(const std::string& path) {
    const ModelWeights w = load_safetensors(path);
    LabeledBatch batch;
    batch.inputs = w.at("inputs");
    if (batch.inputs.rank() != 2) {
        fail(errc::shape_mismatch, "batch inputs must be rank-2");
    }
    if (w.has("labels")) {
        const Tensor& raw = w.at("labels");
        if (raw.rank() != 1 || raw.dim(0) != batch.inputs.dim(0)) {
            fail(errc::shape_mismatch, "labels shape " + raw.shape_str());
        }
        std::vector<int> labels;
        labels.reserve(static_cast<size_t>(raw.numel()));
        for (float v : raw.values()) labels.push_back(static_cast<int>(std::lround(v)));
        batch.labels = std::move(labels);
    }
    auto it = w.metadata.find("task_id");
    batch.task_id = it != w.metadata.end() ? it->second : path;
    return batch;
}

void save_batch(const LabeledBatch& batch, const std::string& path) {
    ModelWeights w;
    w.tensors.emplace("inputs", batch.inputs);
    if (batch.labels) {
        Tensor raw({batch.inputs.dim(0)});
        for (int64_t i = 0; i < raw.numel(); ++i) {
            raw[i] = static_cast<float>((*batch.labels)[static_cast<size_t>(i)]);
        }
        w.tensors.emplace("labels", std::move(raw));
    }
    if (!batch.task_id.empty()) {
        w.metadata["task_id"] = batch.task_id;
    }
    save_safetensors(w, path);
}

}  // namespace magic
