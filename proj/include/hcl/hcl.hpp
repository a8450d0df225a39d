/*
 * Copyright 2026 The HCL Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "hcl/nn.hpp"

namespace hcl {

// A linear classifier reading the flattened output of one hidden layer.
template <Scalar T>
struct Head {
    std::size_t layer = 0;
    Tensor<T> weight; // D_i x C
    Tensor<T> bias;   // C

    friend bool operator==(const Head&, const Head&) = default;
};

// Backbone plus auxiliary heads. With no heads this is the vanilla model.
// Training minimises CE(final) + sum_i lambda_i * CE(head_i).
template <Scalar T>
struct HclModel {
    NetworkSpec spec;
    ParamSet<T> params;
    std::vector<Head<T>> heads;
    std::vector<double> lambdas;

    bool is_vanilla() const { return heads.empty(); }

    bool lambdas_all_zero() const
    {
        return std::all_of(lambdas.begin(), lambdas.end(), [](double l) { return l == 0.0; });
    }

    void validate() const
    {
        if (lambdas.size() != heads.size())
            throw ArgumentError("HclModel: " + std::to_string(lambdas.size()) + " lambdas for "
                                + std::to_string(heads.size()) + " heads");
        for (std::size_t i = 0; i < heads.size(); ++i) {
            if (heads[i].layer + 1 >= spec.size())
                throw ArgumentError("HclModel: head " + std::to_string(i) + " is not on a hidden layer");
            if (i > 0 && heads[i].layer <= heads[i - 1].layer)
                throw ArgumentError("HclModel: head layer indices must be strictly increasing");
            if (!(lambdas[i] >= 0.0))
                throw ArgumentError("HclModel: lambda " + std::to_string(i) + " is negative");
            if (heads[i].weight.rank() != 2 || heads[i].weight.dim(0) != shape_size(spec.output_shape(heads[i].layer))
                || heads[i].weight.dim(1) != spec.num_classes())
                throw DimensionError("HclModel: head " + std::to_string(i) + " weight shape mismatch");
        }
    }

    template <Scalar U>
    HclModel<U> cast() const
    {
        HclModel<U> m{spec, params.template cast<U>(), {}, lambdas};
        for (const auto& h : heads)
            m.heads.push_back({h.layer, h.weight.template cast<U>(), h.bias.template cast<U>()});
        return m;
    }

    friend bool operator==(const HclModel&, const HclModel&) = default;
};

template <Scalar T>
HclModel<T> make_vanilla(const NetworkSpec& spec, std::uint64_t seed)
{
    RngStream rng(seed, StreamId::BackboneInit);
    return HclModel<T>{spec, init_params<T>(spec, rng), {}, {}};
}

// Indices of every layer except the final classifier.
inline std::vector<std::size_t> hidden_layers(const NetworkSpec& spec)
{
    std::vector<std::size_t> idx(spec.size() - 1);
    for (std::size_t i = 0; i < idx.size(); ++i)
        idx[i] = i;
    return idx;
}

// Adds one linear head per index, drawing weights only from `rng` (the
// head-init stream) so the backbone initialisation is unaffected. Lambdas
// default to equal weights 1/H.
template <Scalar T>
HclModel<T> attach_heads(HclModel<T> backbone, std::vector<std::size_t> layer_indices, std::size_t num_classes,
                         RngStream& rng, std::vector<double> lambdas = {})
{
    if (num_classes < 2)
        throw ArgumentError("attach_heads: num_classes must be >= 2");
    if (num_classes != backbone.spec.num_classes())
        throw ArgumentError("attach_heads: num_classes does not match the backbone's logits");
    std::sort(layer_indices.begin(), layer_indices.end());
    for (std::size_t i = 0; i < layer_indices.size(); ++i) {
        if (layer_indices[i] >= backbone.spec.size())
            throw ArgumentError("attach_heads: layer index " + std::to_string(layer_indices[i]) + " out of range");
        if (layer_indices[i] + 1 == backbone.spec.size())
            throw ArgumentError("attach_heads: layer " + std::to_string(layer_indices[i])
                                + " is the final classifier");
        if (i > 0 && layer_indices[i] == layer_indices[i - 1])
            throw ArgumentError("attach_heads: duplicate layer index " + std::to_string(layer_indices[i]));
    }
    backbone.heads.clear();
    for (auto idx : layer_indices) {
        const std::size_t d = shape_size(backbone.spec.output_shape(idx));
        backbone.heads.push_back({idx, init_uniform_fan<T>({d, num_classes}, d, num_classes, rng),
                                  Tensor<T>({num_classes})});
    }
    if (lambdas.empty() && !layer_indices.empty())
        lambdas.assign(layer_indices.size(), 1.0 / static_cast<double>(layer_indices.size()));
    backbone.lambdas = std::move(lambdas);
    backbone.validate();
    return backbone;
}

template <Scalar T>
HclModel<T> strip_heads(HclModel<T> model)
{
    model.heads.clear();
    model.lambdas.clear();
    return model;
}

template <Scalar T>
Tensor<T> head_logits(const Head<T>& head, const Tensor<T>& z)
{
    const std::size_t B = z.dim(0);
    const std::size_t D = head.weight.dim(0), C = head.weight.dim(1);
    if (z.size() != B * D)
        throw DimensionError("head_logits: representation size does not match head input");
    Tensor<T> out({B, C});
    detail::gemm(false, false, B, C, D, z.data(), head.weight.data(), out.data(), false);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            out[b * C + c] += head.bias[c];
    return out;
}

template <Scalar T>
struct HclOutput {
    ActivationTrace<T> trace;
    std::vector<Tensor<T>> head_logits;

    const Tensor<T>& final_logits() const { return trace.logits(); }
};

// One backbone pass; heads read the trace and never feed later layers.
template <Scalar T>
HclOutput<T> hcl_forward(const HclModel<T>& model, const Tensor<T>& batch, Mode mode, RngStream* rng = nullptr)
{
    HclOutput<T> out{forward(model.spec, model.params, batch, mode, rng), {}};
    for (const auto& h : model.heads)
        out.head_logits.push_back(head_logits(h, out.trace.per_layer[h.layer]));
    return out;
}

struct HclLossBreakdown {
    double final_loss = 0;
    std::vector<double> per_head_loss;
    double total = 0;
    double final_accuracy = 0;
    std::vector<double> per_head_accuracy;
};

template <Scalar T>
double accuracy(const Tensor<T>& logits, std::span<const int> labels)
{
    const auto pred = argmax_rows(logits);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        hit += pred[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

template <Scalar T>
HclLossBreakdown hcl_loss(std::span<const Tensor<T>> head_logits, const Tensor<T>& final_logits,
                          std::span<const int> labels, std::span<const double> lambdas)
{
    if (lambdas.size() != head_logits.size())
        throw ArgumentError("hcl_loss: " + std::to_string(lambdas.size()) + " lambdas for "
                            + std::to_string(head_logits.size()) + " heads");
    for (double l : lambdas)
        if (!(l >= 0.0))
            throw ArgumentError("hcl_loss: negative lambda");
    HclLossBreakdown r;
    r.final_loss = softmax_cross_entropy(final_logits, labels).loss;
    r.final_accuracy = accuracy(final_logits, labels);
    r.total = r.final_loss;
    for (std::size_t i = 0; i < head_logits.size(); ++i) {
        const double l = softmax_cross_entropy(head_logits[i], labels).loss;
        r.per_head_loss.push_back(l);
        r.per_head_accuracy.push_back(accuracy(head_logits[i], labels));
        r.total += lambdas[i] * l;
    }
    return r;
}

template <Scalar T>
struct HclGradients {
    ParamSet<T> backbone;
    std::vector<LayerParams<T>> heads;
    Tensor<T> dinput;
};

// Gradient of the composite loss. Each head contributes lambda_i times its
// CE gradient to its own parameters and injects the matching gradient into
// the backbone at its layer. Zero-lambda heads inject nothing.
template <Scalar T>
HclGradients<T> hcl_backward(const HclModel<T>& model, const HclOutput<T>& out, std::span<const int> labels)
{
    if (out.head_logits.size() != model.heads.size())
        throw ArgumentError("hcl_backward: output does not match model heads");
    if (model.lambdas.size() != model.heads.size())
        throw ArgumentError("hcl_backward: lambda count mismatch");
    HclGradients<T> g;
    std::vector<Injection<T>> injections;
    for (std::size_t i = 0; i < model.heads.size(); ++i) {
        const auto& head = model.heads[i];
        const auto& z = out.trace.per_layer[head.layer];
        const std::size_t B = z.dim(0), D = head.weight.dim(0), C = head.weight.dim(1);
        auto ce = softmax_cross_entropy(out.head_logits[i], labels);
        const T lambda = static_cast<T>(model.lambdas[i]);
        for (auto& v : ce.grad.span())
            v *= lambda;
        LayerParams<T> hp{Tensor<T>(head.weight.shape()), Tensor<T>(head.bias.shape())};
        detail::gemm(true, false, D, C, B, z.data(), ce.grad.data(), hp.weight.data(), false);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                hp.bias[c] += ce.grad[b * C + c];
        g.heads.push_back(std::move(hp));
        if (model.lambdas[i] != 0.0) {
            Tensor<T> dz(z.shape());
            detail::gemm(false, true, B, D, C, ce.grad.data(), head.weight.data(), dz.data(), false);
            injections.push_back({head.layer, std::move(dz)});
        }
    }
    auto final_ce = softmax_cross_entropy(out.final_logits(), labels);
    auto bb = backward(model.spec, model.params, out.trace, final_ce.grad,
                       std::span<const Injection<T>>(injections));
    g.backbone = std::move(bb.params);
    g.dinput = std::move(bb.dinput);
    return g;
}

} // namespace hcl
