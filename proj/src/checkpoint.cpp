// Copyright (c) 2026 The MAGIC Authors
// SPDX-License-Identifier: Apache-2.0

#include "magic/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "magic/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

namespace magic {

using nlohmann::json;

const Tensor& ModelWeights::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
        fail(errc::missing_tensor, "no tensor named '" + name + "'");
    }
    return it->second;
}

bool operator==(const ModelWeights& a, const ModelWeights& b) {
    if (a.metadata != b.metadata || a.tensors.size() != b.tensors.size()) return false;
    auto ia = a.tensors.begin();
    auto ib = b.tensors.begin();
    for (; ia != a.tensors.end(); ++ia, ++ib) {
        if (ia->first != ib->first || !bitwise_equal(ia->second, ib->second)) return false;
    }
    return true;
}

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "gelu") return Activation::gelu;
    if (s == "tanh") return Activation::tanh;
    if (s == "none") return Activation::none;
    fail(errc::unknown_activation, "'" + s + "'");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::gelu: return "gelu";
        case Activation::tanh: return "tanh";
        case Activation::none: return "none";
    }
    return "none";
}

namespace {

void append_json_string(std::string& out, const std::string& s) {
    out += '"';
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\b': out += "\\b"; break;
            case '\f': out += "\\f"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    out += '"';
}

uint64_t checked_numel(const std::vector<int64_t>& shape) {
    uint64_t n = 1;
    for (int64_t d : shape) n *= static_cast<uint64_t>(d);
    return n;
}

}  // namespace

std::vector<uint8_t> encode_safetensors(const ModelWeights& w) {
    // std::map iteration is already name-sorted.
    std::string header = "{";
    bool first = true;
    if (!w.metadata.empty()) {
        header += "\"__metadata__\":{";
        bool mfirst = true;
        for (const auto& [k, v] : w.metadata) {
            if (!mfirst) header += ',';
            mfirst = false;
            append_json_string(header, k);
            header += ':';
            append_json_string(header, v);
        }
        header += '}';
        first = false;
    }
    uint64_t offset = 0;
    for (const auto& [name, t] : w.tensors) {
        if (!first) header += ',';
        first = false;
        append_json_string(header, name);
        header += ":{\"dtype\":\"F32\",\"shape\":[";
        for (size_t i = 0; i < t.shape().size(); ++i) {
            header += (i ? "," : "") + std::to_string(t.shape()[i]);
        }
        const uint64_t nbytes = static_cast<uint64_t>(t.numel()) * 4;
        header += "],\"data_offsets\":[" + std::to_string(offset) + "," +
                  std::to_string(offset + nbytes) + "]}";
        offset += nbytes;
    }
    header += '}';

    std::vector<uint8_t> out(8 + header.size() + offset);
    const uint64_t n = header.size();
    std::memcpy(out.data(), &n, 8);
    std::memcpy(out.data() + 8, header.data(), header.size());
    uint8_t* data = out.data() + 8 + header.size();
    for (const auto& [name, t] : w.tensors) {
        std::memcpy(data, t.data(), static_cast<size_t>(t.numel()) * 4);
        data += t.numel() * 4;
    }
    return out;
}

ModelWeights decode_safetensors(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8) {
        fail(errc::malformed_header, "file shorter than the 8-byte length prefix");
    }
    uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data(), 8);
    if (header_len > bytes.size() - 8) {
        fail(errc::malformed_header, "declared header length exceeds file size");
    }
    json header;
    try {
        header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<int64_t>(header_len));
    } catch (const json::exception& e) {
        fail(errc::malformed_header, e.what());
    }
    if (!header.is_object()) {
        fail(errc::malformed_header, "header is not a JSON object");
    }

    const uint64_t data_len = bytes.size() - 8 - header_len;
    const uint8_t* data = bytes.data() + 8 + header_len;

    ModelWeights w;
    std::vector<std::pair<uint64_t, uint64_t>> regions;
    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            if (!entry.is_object()) {
                fail(errc::malformed_header, "__metadata__ is not an object");
            }
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string()) {
                    fail(errc::malformed_header, "__metadata__ value for '" + k + "' is not a string");
                }
                w.metadata[k] = v.get<std::string>();
            }
            continue;
        }
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets") || entry.size() != 3) {
            fail(errc::malformed_header, "bad tensor entry for '" + name + "'");
        }
        if (!entry["dtype"].is_string()) {
            fail(errc::malformed_header, "dtype for '" + name + "' is not a string");
        }
        const std::string dtype = entry["dtype"].get<std::string>();
        if (dtype != "F32") {
            fail(errc::unsupported_dtype, "'" + dtype + "' for tensor '" + name + "' (only F32)");
        }
        if (!entry["shape"].is_array()) {
            fail(errc::malformed_header, "shape for '" + name + "' is not an array");
        }
        std::vector<int64_t> shape;
        for (const auto& d : entry["shape"]) {
            if (!d.is_number_integer() || d.get<int64_t>() <= 0) {
                fail(errc::malformed_header, "bad dimension in shape of '" + name + "'");
            }
            shape.push_back(d.get<int64_t>());
        }
        const auto& offs = entry["data_offsets"];
        if (!offs.is_array() || offs.size() != 2 || !offs[0].is_number_integer() ||
            !offs[1].is_number_integer()) {
            fail(errc::malformed_header, "bad data_offsets for '" + name + "'");
        }
        const int64_t begin_s = offs[0].get<int64_t>();
        const int64_t end_s = offs[1].get<int64_t>();
        if (begin_s < 0 || end_s < begin_s) {
            fail(errc::malformed_header, "inverted data_offsets for '" + name + "'");
        }
        const uint64_t begin = static_cast<uint64_t>(begin_s);
        const uint64_t end = static_cast<uint64_t>(end_s);
        if (end > data_len) {
            fail(errc::offset_overlap, "region of '" + name + "' extends past the data buffer");
        }
        if (end - begin != checked_numel(shape) * 4) {
            fail(errc::malformed_header, "region size of '" + name + "' does not match its shape");
        }
        regions.emplace_back(begin, end);

        std::vector<float> values(static_cast<size_t>((end - begin) / 4));
        std::memcpy(values.data(), data + begin, end - begin);
        w.tensors.emplace(name, Tensor(std::move(shape), std::move(values)));
    }

    std::sort(regions.begin(), regions.end());
    for (size_t i = 1; i < regions.size(); ++i) {
        if (regions[i].first < regions[i - 1].second) {
            fail(errc::offset_overlap, "tensor data regions overlap");
        }
    }
    return w;
}

ModelWeights load_safetensors(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(errc::io_failure, "cannot open '" + path + "' for reading");
    }
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ModelWeights w = decode_safetensors(bytes);
    w.source_path = path;
    return w;
}

void save_safetensors(const ModelWeights& w, const std::string& path) {
    for (const auto& [name, t] : w.tensors) {
        if (!all_finite(t)) {
            fail(errc::io_failure, "tensor '" + name + "' contains non-finite values");
        }
    }
    const std::vector<uint8_t> bytes = encode_safetensors(w);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(errc::io_failure, "cannot open '" + path + "' for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        fail(errc::io_failure, "short write to '" + path + "'");
    }
}

namespace {

ModelManifest parse_manifest_json(const json& doc, const std::string& path) {
    if (!doc.is_object() || !doc.contains("input_dim") || !doc.contains("num_classes") ||
        !doc.contains("layers") || !doc["layers"].is_array() || doc["layers"].empty()) {
        fail(errc::malformed_header, "manifest '" + path + "' needs input_dim, num_classes, layers[]");
    }
    ModelManifest m;
    m.input_dim = doc["input_dim"].get<int64_t>();
    m.num_classes = doc["num_classes"].get<int64_t>();
    if (m.input_dim <= 0 || m.num_classes <= 0) {
        fail(errc::out_of_range, "manifest dims must be positive");
    }
    int index = 0;
    for (const auto& entry : doc["layers"]) {
        LayerSpec spec;
        spec.index = index++;
        spec.weight_name = entry.at("weight").get<std::string>();
        if (entry.contains("bias") && !entry["bias"].is_null()) {
            spec.bias_name = entry["bias"].get<std::string>();
        }
        spec.activation = activation_from_string(entry.value("activation", std::string("none")));
        m.layers.push_back(std::move(spec));
    }
    return m;
}

}  // namespace

ModelManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        fail(errc::io_failure, "cannot open manifest '" + path + "'");
    }
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        fail(errc::malformed_header, std::string("manifest parse: ") + e.what());
    }
    return parse_manifest_json(doc, path);
}

ModelManifest load_manifest(const std::string& path, const ModelWeights& reference) {
    ModelManifest m = load_manifest(path);
    validate_manifest(m, reference);
    return m;
}

void validate_manifest(const ModelManifest& m, const ModelWeights& w) {
    int64_t prev_out = m.input_dim;
    for (const auto& layer : m.layers) {
        const Tensor& weight = w.at(layer.weight_name);
        if (weight.rank() != 2) {
            fail(errc::dimension_mismatch,
                 "layer " + std::to_string(layer.index) + " weight is not rank-2");
        }
        if (weight.dim(0) != prev_out) {
            fail(errc::dimension_mismatch,
                 "layer " + std::to_string(layer.index) + " input dim " +
                     std::to_string(weight.dim(0)) + " != previous output dim " +
                     std::to_string(prev_out));
        }
        if (layer.bias_name) {
            const Tensor& bias = w.at(*layer.bias_name);
            if (bias.rank() != 1 || bias.dim(0) != weight.dim(1)) {
                fail(errc::dimension_mismatch,
                     "layer " + std::to_string(layer.index) + " bias shape " + bias.shape_str());
            }
        }
        prev_out = weight.dim(1);
    }
    if (prev_out != m.num_classes) {
        fail(errc::dimension_mismatch, "final layer output dim " + std::to_string(prev_out) +
                                           " != num_classes " + std::to_string(m.num_classes));
    }
}

}  // namespace magic
