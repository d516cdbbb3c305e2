// Copyright (c) 2026 The MAGIC Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint I/O (safetensors-compatible) and the sidecar manifest that
// describes layer structure.
//
// Checkpoint layout, bit-exact:
//   bytes 0..7   unsigned 64-bit little-endian header length N
//   bytes 8..8+N UTF-8 JSON object: tensor name ->
//                  {"dtype":"F32","shape":[...],"data_offsets":[begin,end]}
//                plus an optional "__metadata__" string-to-string map;
//                offsets are relative to byte 8+N
//   remainder    raw little-endian float data
//
// Only F32 is supported; anything else is rejected with UnsupportedDtype.
// save_safetensors serialises tensors in name-sorted order with contiguous
// non-overlapping offsets, so identical weights produce identical bytes.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "magic/tensor.hpp"

namespace magic {

struct ModelWeights {
    std::map<std::string, Tensor> tensors;  // name-ordered
    std::map<std::string, std::string> metadata;
    std::optional<std::string> source_path;

    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    const Tensor& at(const std::string& name) const;
};

bool operator==(const ModelWeights& a, const ModelWeights& b);

enum class Activation { relu, gelu, tanh, none };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

struct LayerSpec {
    int index = 0;
    std::string weight_name;            // rank-2 [in_dim, out_dim]
    std::optional<std::string> bias_name;  // rank-1 [out_dim]
    Activation activation = Activation::none;
};

struct ModelManifest {
    std::vector<LayerSpec> layers;
    int64_t input_dim = 0;
    int64_t num_classes = 0;

    int num_layers() const { return static_cast<int>(layers.size()); }
};

ModelWeights load_safetensors(const std::string& path);
void save_safetensors(const ModelWeights& w, const std::string& path);

// Serialised checkpoint bytes, used by both file I/O and tests.
std::vector<uint8_t> encode_safetensors(const ModelWeights& w);
ModelWeights decode_safetensors(const std::vector<uint8_t>& bytes);

ModelManifest load_manifest(const std::string& path);
ModelManifest load_manifest(const std::string& path, const ModelWeights& reference);

// Checks rank/bias/composition invariants of m against w. Throws
// MissingTensor or DimensionMismatch.
void validate_manifest(const ModelManifest& m, const ModelWeights& w);

}  // namespace magic
