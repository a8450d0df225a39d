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

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "hcl/tensor.hpp"

namespace hcl {

enum class Activation { Identity, Relu, Tanh };

inline std::string to_string(Activation a)
{
    switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    }
    return "identity";
}

inline Activation parse_activation(const std::string& s)
{
    if (s == "identity") return Activation::Identity;
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    throw ArgumentError("unknown activation '" + s + "'");
}

struct Dense {
    std::size_t in = 1;
    std::size_t out = 1;
    Activation activation = Activation::Identity;
};

struct Conv2d {
    std::size_t in_ch = 1;
    std::size_t out_ch = 1;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    Activation activation = Activation::Identity;
};

struct MaxPool {
    std::size_t window = 2;
    std::size_t stride = 2;
};

// Sub-sampling by window mean; no trainable coefficients.
struct AvgPool {
    std::size_t window = 2;
    std::size_t stride = 2;
};

struct Dropout {
    double rate = 0.5;
};

struct Flatten { };

using LayerSpec = std::variant<Dense, Conv2d, MaxPool, AvgPool, Dropout, Flatten>;

inline std::string layer_kind(const LayerSpec& l)
{
    static const char* names[] = {"dense", "conv2d", "maxpool", "avgpool", "dropout", "flatten"};
    return names[l.index()];
}

inline bool has_params(const LayerSpec& l)
{
    return std::holds_alternative<Dense>(l) || std::holds_alternative<Conv2d>(l);
}

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// NetworkSpec: an ordered layer list whose per-sample shapes are inferred and
// checked on construction. The last layer must yield a flat logit vector.
// ---------------------------------------------------------------------------

namespace detail {

inline std::size_t pooled_extent(std::size_t n, std::size_t window, std::size_t stride, std::size_t layer)
{
    if (window > n || (n - window) % stride != 0)
        throw DimensionError("layer " + std::to_string(layer) + ": pool window " + std::to_string(window)
                             + " stride " + std::to_string(stride) + " does not tile extent "
                             + std::to_string(n));
    return (n - window) / stride + 1;
}

inline Shape infer_output(const LayerSpec& layer, const Shape& in, std::size_t idx)
{
    auto where = [&] { return "layer " + std::to_string(idx) + " (" + layer_kind(layer) + ")"; };
    return std::visit([&](const auto& l) -> Shape {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Dense>) {
            if (l.in == 0 || l.out == 0)
                throw ArgumentError(where() + ": zero extent");
            if (shape_size(in) != l.in)
                throw DimensionError(where() + ": expects " + std::to_string(l.in) + " inputs, got "
                                     + shape_str(in));
            return {l.out};
        } else if constexpr (std::is_same_v<L, Conv2d>) {
            if (l.in_ch == 0 || l.out_ch == 0 || l.kernel_h == 0 || l.kernel_w == 0 || l.stride == 0)
                throw ArgumentError(where() + ": zero extent or stride");
            if (in.size() != 3 || in[0] != l.in_ch)
                throw DimensionError(where() + ": expects " + std::to_string(l.in_ch) + "xHxW input, got "
                                     + shape_str(in));
            const std::size_t ph = in[1] + 2 * l.padding;
            const std::size_t pw = in[2] + 2 * l.padding;
            if (l.kernel_h > ph || l.kernel_w > pw)
                throw DimensionError(where() + ": kernel larger than padded input " + shape_str(in));
            return {l.out_ch, (ph - l.kernel_h) / l.stride + 1, (pw - l.kernel_w) / l.stride + 1};
        } else if constexpr (std::is_same_v<L, MaxPool> || std::is_same_v<L, AvgPool>) {
            if (l.window == 0 || l.stride == 0)
                throw ArgumentError(where() + ": zero window or stride");
            if (in.size() != 3)
                throw DimensionError(where() + ": expects CxHxW input, got " + shape_str(in));
            return {in[0], pooled_extent(in[1], l.window, l.stride, idx),
                    pooled_extent(in[2], l.window, l.stride, idx)};
        } else if constexpr (std::is_same_v<L, Dropout>) {
            if (!(l.rate >= 0.0 && l.rate < 1.0))
                throw ArgumentError(where() + ": rate must lie in [0, 1)");
            return in;
        } else {
            return {shape_size(in)};
        }
    }, layer);
}

} // namespace detail

class NetworkSpec {
public:
    NetworkSpec() = default;

    NetworkSpec(Shape input_shape, std::vector<LayerSpec> layers)
      : m_input(std::move(input_shape)), m_layers(std::move(layers))
    {
        if (m_input.empty() || shape_size(m_input) == 0)
            throw DimensionError("NetworkSpec: empty input shape");
        if (m_layers.empty())
            throw ArgumentError("NetworkSpec: no layers");
        Shape cur = m_input;
        for (std::size_t i = 0; i < m_layers.size(); ++i) {
            cur = detail::infer_output(m_layers[i], cur, i);
            m_shapes.push_back(cur);
        }
        if (cur.size() != 1 || cur[0] < 2)
            throw DimensionError("NetworkSpec: final layer must produce a flat logit vector of length >= 2, got "
                                 + shape_str(cur));
    }

    const Shape& input_shape() const { return m_input; }
    const std::vector<LayerSpec>& layers() const { return m_layers; }
    std::size_t size() const { return m_layers.size(); }
    const LayerSpec& layer(std::size_t i) const { return m_layers.at(i); }

    // Per-sample output shape of layer i.
    const Shape& output_shape(std::size_t i) const { return m_shapes.at(i); }
    const Shape& input_shape_of(std::size_t i) const { return i == 0 ? m_input : m_shapes.at(i - 1); }
    std::size_t num_classes() const { return m_shapes.back()[0]; }

    friend bool operator==(const NetworkSpec& a, const NetworkSpec& b)
    {
        return a.to_text() == b.to_text();
    }

    std::string to_text() const;
    static NetworkSpec from_text(const std::string& text);

private:
    Shape m_input;
    std::vector<LayerSpec> m_layers;
    std::vector<Shape> m_shapes;
};

// Text form, one layer per line:
//   input 1 28 28
//   conv2d in=1 out=6 kernel=5x5 stride=1 padding=2 activation=tanh
//   avgpool window=2 stride=2
//   dense in=120 out=84 activation=tanh
inline std::string NetworkSpec::to_text() const
{
    std::ostringstream os;
    os << "input";
    for (auto e : m_input)
        os << ' ' << e;
    os << '\n';
    for (const auto& layer : m_layers) {
        os << layer_kind(layer);
        std::visit([&](const auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, Dense>) {
                os << " in=" << l.in << " out=" << l.out << " activation=" << to_string(l.activation);
            } else if constexpr (std::is_same_v<L, Conv2d>) {
                os << " in=" << l.in_ch << " out=" << l.out_ch << " kernel=" << l.kernel_h << 'x' << l.kernel_w
                   << " stride=" << l.stride << " padding=" << l.padding
                   << " activation=" << to_string(l.activation);
            } else if constexpr (std::is_same_v<L, MaxPool> || std::is_same_v<L, AvgPool>) {
                os << " window=" << l.window << " stride=" << l.stride;
            } else if constexpr (std::is_same_v<L, Dropout>) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.17g", l.rate);
                os << " rate=" << buf;
            }
        }, layer);
        os << '\n';
    }
    return os.str();
}

inline NetworkSpec NetworkSpec::from_text(const std::string& text)
{
    std::istringstream is(text);
    std::string line;
    Shape input;
    std::vector<LayerSpec> layers;
    auto to_size = [](const std::string& v) -> std::size_t {
        std::size_t pos = 0;
        unsigned long long x = 0;
        try {
            x = std::stoull(v, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != v.size())
            throw ArgumentError("network spec: bad integer '" + v + "'");
        return static_cast<std::size_t>(x);
    };
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string kind;
        if (!(ls >> kind) || kind[0] == '#')
            continue;
        if (kind == "input") {
            std::string e;
            while (ls >> e)
                input.push_back(to_size(e));
            continue;
        }
        std::map<std::string, std::string> kv;
        std::string tok;
        while (ls >> tok) {
            auto eq = tok.find('=');
            if (eq == std::string::npos)
                throw ArgumentError("network spec: expected key=value, got '" + tok + "'");
            kv[tok.substr(0, eq)] = tok.substr(eq + 1);
        }
        auto get = [&](const std::string& k) -> const std::string& {
            auto it = kv.find(k);
            if (it == kv.end())
                throw ArgumentError("network spec: " + kind + " missing '" + k + "'");
            return it->second;
        };
        if (kind == "dense") {
            layers.push_back(Dense{to_size(get("in")), to_size(get("out")), parse_activation(get("activation"))});
        } else if (kind == "conv2d") {
            const auto& k = get("kernel");
            auto x = k.find('x');
            if (x == std::string::npos)
                throw ArgumentError("network spec: kernel must be HxW");
            layers.push_back(Conv2d{to_size(get("in")), to_size(get("out")), to_size(k.substr(0, x)),
                                    to_size(k.substr(x + 1)), to_size(get("stride")), to_size(get("padding")),
                                    parse_activation(get("activation"))});
        } else if (kind == "maxpool") {
            layers.push_back(MaxPool{to_size(get("window")), to_size(get("stride"))});
        } else if (kind == "avgpool") {
            layers.push_back(AvgPool{to_size(get("window")), to_size(get("stride"))});
        } else if (kind == "dropout") {
            layers.push_back(Dropout{std::stod(get("rate"))});
        } else if (kind == "flatten") {
            layers.push_back(Flatten{});
        } else {
            throw ArgumentError("network spec: unknown layer kind '" + kind + "'");
        }
    }
    return NetworkSpec(std::move(input), std::move(layers));
}

// ---------------------------------------------------------------------------
// Parameters. Entries for parameterless layers hold empty tensors.
// ---------------------------------------------------------------------------

template <Scalar T>
struct LayerParams {
    Tensor<T> weight;
    Tensor<T> bias;

    bool empty() const { return weight.empty(); }
    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

template <Scalar T>
struct ParamSet {
    std::vector<LayerParams<T>> layers;

    std::size_t size() const { return layers.size(); }
    LayerParams<T>& operator[](std::size_t i) { return layers[i]; }
    const LayerParams<T>& operator[](std::size_t i) const { return layers[i]; }

    // Zero-filled set with the same shapes.
    ParamSet zeros_like() const
    {
        ParamSet z;
        for (const auto& p : layers) {
            LayerParams<T> q;
            if (!p.empty()) {
                q.weight = Tensor<T>(p.weight.shape());
                q.bias = Tensor<T>(p.bias.shape());
            }
            z.layers.push_back(std::move(q));
        }
        return z;
    }

    template <Scalar U>
    ParamSet<U> cast() const
    {
        ParamSet<U> out;
        for (const auto& p : layers) {
            LayerParams<U> q;
            if (!p.empty()) {
                q.weight = p.weight.template cast<U>();
                q.bias = p.bias.template cast<U>();
            }
            out.layers.push_back(std::move(q));
        }
        return out;
    }

    friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

template <Scalar T>
ParamSet<T> init_params(const NetworkSpec& spec, RngStream& rng)
{
    ParamSet<T> params;
    for (const auto& layer : spec.layers()) {
        LayerParams<T> p;
        if (const auto* d = std::get_if<Dense>(&layer)) {
            p.weight = init_uniform_fan<T>({d->in, d->out}, d->in, d->out, rng);
            p.bias = Tensor<T>({d->out});
        } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
            const std::size_t area = c->kernel_h * c->kernel_w;
            p.weight = init_uniform_fan<T>({c->out_ch, c->in_ch, c->kernel_h, c->kernel_w}, c->in_ch * area,
                                           c->out_ch * area, rng);
            p.bias = Tensor<T>({c->out_ch});
        }
        params.layers.push_back(std::move(p));
    }
    return params;
}

// ---------------------------------------------------------------------------
// Trace of one forward pass: every layer's post-activation output plus what
// backward needs (pool argmax positions, dropout masks).
// ---------------------------------------------------------------------------

template <Scalar T>
struct ActivationTrace {
    Tensor<T> input;
    std::vector<Tensor<T>> per_layer;
    std::vector<std::vector<std::size_t>> argmax;
    std::vector<Tensor<T>> dropout_mask;
    Mode mode = Mode::Eval;

    std::size_t batch() const { return input.dim(0); }
    const Tensor<T>& logits() const { return per_layer.back(); }
    const Tensor<T>& layer_input(std::size_t i) const { return i == 0 ? input : per_layer[i - 1]; }
};

namespace detail {

template <typename T>
void activate(Activation a, std::span<T> z)
{
    if (a == Activation::Relu) {
        for (auto& v : z)
            v = v > T(0) ? v : T(0);
    } else if (a == Activation::Tanh) {
        for (auto& v : z)
            v = std::tanh(v);
    }
}

// g <- g * f'(.) expressed through the activation output z.
template <typename T>
void activation_backward(Activation a, std::span<const T> z, std::span<T> g)
{
    if (a == Activation::Relu) {
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!(z[i] > T(0)))
                g[i] = T(0);
    } else if (a == Activation::Tanh) {
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] *= T(1) - z[i] * z[i];
    }
}

template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w, const Conv2d& c, std::size_t oh,
            std::size_t ow, T* col)
{
    const auto pad = static_cast<std::ptrdiff_t>(c.padding);
    std::size_t row = 0;
    for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t ky = 0; ky < c.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < c.kernel_w; ++kx, ++row) {
                T* dst = col + row * oh * ow;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * c.stride + ky) - pad;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * c.stride + kx) - pad;
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h)
                                         && ix < static_cast<std::ptrdiff_t>(w);
                        dst[oy * ow + ox] = inside ? x[(ch * h + static_cast<std::size_t>(iy)) * w
                                                       + static_cast<std::size_t>(ix)]
                                                   : T(0);
                    }
                }
            }
}

template <typename T>
void col2im(const T* col, std::size_t channels, std::size_t h, std::size_t w, const Conv2d& c, std::size_t oh,
            std::size_t ow, T* dx)
{
    const auto pad = static_cast<std::ptrdiff_t>(c.padding);
    std::size_t row = 0;
    for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t ky = 0; ky < c.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < c.kernel_w; ++kx, ++row) {
                const T* src = col + row * oh * ow;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * c.stride + ky) - pad;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h))
                        continue;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * c.stride + kx) - pad;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w))
                            continue;
                        dx[(ch * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)]
                            += src[oy * ow + ox];
                    }
                }
            }
}

} // namespace detail

// Cross-correlation with zero padding over a B x C x H x W batch; kernel is
// O x C x kh x kw. No activation.
template <Scalar T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                         std::size_t stride, std::size_t padding)
{
    if (input.rank() != 4 || kernel.rank() != 4)
        throw DimensionError("conv2d: expects 4-D input and kernel");
    if (kernel.dim(1) != input.dim(1))
        throw DimensionError("conv2d: kernel channels " + std::to_string(kernel.dim(1)) + " != input channels "
                             + std::to_string(input.dim(1)));
    if (bias.size() != kernel.dim(0))
        throw DimensionError("conv2d: bias length mismatch");
    if (stride == 0)
        throw ArgumentError("conv2d: stride must be >= 1");
    const Conv2d c{kernel.dim(1), kernel.dim(0), kernel.dim(2), kernel.dim(3), stride, padding};
    const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (c.kernel_h > H + 2 * padding || c.kernel_w > W + 2 * padding)
        throw DimensionError("conv2d: kernel larger than padded input");
    const std::size_t OH = (H + 2 * padding - c.kernel_h) / stride + 1;
    const std::size_t OW = (W + 2 * padding - c.kernel_w) / stride + 1;
    const std::size_t ckk = C * c.kernel_h * c.kernel_w;
    const std::size_t P = OH * OW;
    Tensor<T> out({B, c.out_ch, OH, OW});
    std::vector<T> col(ckk * P);
    for (std::size_t b = 0; b < B; ++b) {
        detail::im2col(input.data() + b * C * H * W, C, H, W, c, OH, OW, col.data());
        T* o = out.data() + b * c.out_ch * P;
        detail::gemm(false, false, c.out_ch, P, ckk, kernel.data(), col.data(), o, false);
        for (std::size_t oc = 0; oc < c.out_ch; ++oc)
            for (std::size_t p = 0; p < P; ++p)
                o[oc * P + p] += bias[oc];
    }
    return out;
}

// Per-window maximum over B x C x H x W; ties resolve to the first position
// in row-major scan order. Returns flat input offsets of each maximum.
template <Scalar T>
std::pair<Tensor<T>, std::vector<std::size_t>> maxpool_forward(const Tensor<T>& input, std::size_t window,
                                                                std::size_t stride)
{
    if (input.rank() != 4)
        throw DimensionError("maxpool: expects 4-D input");
    if (window == 0 || stride == 0)
        throw ArgumentError("maxpool: zero window or stride");
    const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t OH = detail::pooled_extent(H, window, stride, 0);
    const std::size_t OW = detail::pooled_extent(W, window, stride, 0);
    Tensor<T> out({B, C, OH, OW});
    std::vector<std::size_t> arg(out.size());
    std::size_t o = 0;
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const std::size_t base = bc * H * W;
        for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox, ++o) {
                std::size_t best = base + (oy * stride) * W + ox * stride;
                T bv = input[best];
                for (std::size_t ky = 0; ky < window; ++ky)
                    for (std::size_t kx = 0; kx < window; ++kx) {
                        const std::size_t idx = base + (oy * stride + ky) * W + ox * stride + kx;
                        if (input[idx] > bv) {
                            bv = input[idx];
                            best = idx;
                        }
                    }
                out[o] = bv;
                arg[o] = best;
            }
    }
    return {std::move(out), std::move(arg)};
}

template <Scalar T>
Tensor<T> avgpool_forward(const Tensor<T>& input, std::size_t window, std::size_t stride)
{
    if (input.rank() != 4)
        throw DimensionError("avgpool: expects 4-D input");
    const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t OH = detail::pooled_extent(H, window, stride, 0);
    const std::size_t OW = detail::pooled_extent(W, window, stride, 0);
    const T scale = T(1) / static_cast<T>(window * window);
    Tensor<T> out({B, C, OH, OW});
    std::size_t o = 0;
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const T* x = input.data() + bc * H * W;
        for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox, ++o) {
                T s = 0;
                for (std::size_t ky = 0; ky < window; ++ky)
                    for (std::size_t kx = 0; kx < window; ++kx)
                        s += x[(oy * stride + ky) * W + ox * stride + kx];
                out[o] = s * scale;
            }
    }
    return out;
}

namespace detail {

inline Shape batched(std::size_t b, const Shape& s)
{
    Shape out{b};
    out.insert(out.end(), s.begin(), s.end());
    return out;
}

} // namespace detail

// Runs the backbone, keeping every layer output. `rng` drives dropout in
// train mode and may be null in eval mode.
template <Scalar T>
ActivationTrace<T> forward(const NetworkSpec& spec, const ParamSet<T>& params, const Tensor<T>& batch, Mode mode,
                           RngStream* rng = nullptr)
{
    if (batch.rank() != spec.input_shape().size() + 1
        || !std::equal(spec.input_shape().begin(), spec.input_shape().end(), batch.shape().begin() + 1))
        throw DimensionError("forward: batch shape " + shape_str(batch.shape()) + " does not match input shape "
                             + shape_str(spec.input_shape()) + " with a leading batch extent");
    if (params.size() != spec.size())
        throw DimensionError("forward: parameter set has " + std::to_string(params.size()) + " layers, network has "
                             + std::to_string(spec.size()));
    const std::size_t B = batch.dim(0);
    ActivationTrace<T> trace;
    trace.mode = mode;
    trace.input = batch;
    trace.per_layer.reserve(spec.size());
    trace.argmax.resize(spec.size());
    trace.dropout_mask.resize(spec.size());

    for (std::size_t i = 0; i < spec.size(); ++i) {
        const Tensor<T>& x = trace.layer_input(i);
        const Shape in_shape = detail::batched(B, spec.input_shape_of(i));
        const Shape out_shape = detail::batched(B, spec.output_shape(i));
        Tensor<T> z = std::visit([&](const auto& l) -> Tensor<T> {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, Dense>) {
                Tensor<T> out({B, l.out});
                detail::gemm(false, false, B, l.out, l.in, x.data(), params[i].weight.data(), out.data(), false);
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t o = 0; o < l.out; ++o)
                        out[b * l.out + o] += params[i].bias[o];
                detail::activate(l.activation, out.span());
                return out;
            } else if constexpr (std::is_same_v<L, Conv2d>) {
                Tensor<T> out = conv2d_forward(x.reshaped(in_shape), params[i].weight, params[i].bias, l.stride,
                                               l.padding);
                detail::activate(l.activation, out.span());
                return out;
            } else if constexpr (std::is_same_v<L, MaxPool>) {
                auto [out, arg] = maxpool_forward(x.reshaped(in_shape), l.window, l.stride);
                trace.argmax[i] = std::move(arg);
                return std::move(out);
            } else if constexpr (std::is_same_v<L, AvgPool>) {
                return avgpool_forward(x.reshaped(in_shape), l.window, l.stride);
            } else if constexpr (std::is_same_v<L, Dropout>) {
                if (mode == Mode::Eval || l.rate == 0.0)
                    return x;
                if (rng == nullptr)
                    throw ArgumentError("forward: train-mode dropout needs an rng stream");
                const T keep_scale = T(1) / static_cast<T>(1.0 - l.rate);
                Tensor<T> mask(x.shape());
                Tensor<T> out(x.shape());
                for (std::size_t k = 0; k < x.size(); ++k) {
                    mask[k] = rng->bernoulli(l.rate) ? T(0) : keep_scale;
                    out[k] = x[k] * mask[k];
                }
                trace.dropout_mask[i] = std::move(mask);
                return out;
            } else {
                return x;
            }
        }, spec.layer(i));
        z.reshape(out_shape);
        if (!z.all_finite())
            throw NumericError("forward: non-finite activation at layer " + std::to_string(i));
        trace.per_layer.push_back(std::move(z));
    }
    return trace;
}

template <Scalar T>
Tensor<T> softmax(const Tensor<T>& logits)
{
    if (logits.rank() != 2)
        throw DimensionError("softmax: expects B x C logits");
    const std::size_t B = logits.dim(0), C = logits.dim(1);
    Tensor<T> p(logits.shape());
    for (std::size_t b = 0; b < B; ++b) {
        const T* row = logits.data() + b * C;
        const double m = *std::max_element(row, row + C);
        double s = 0;
        for (std::size_t c = 0; c < C; ++c)
            s += std::exp(static_cast<double>(row[c]) - m);
        for (std::size_t c = 0; c < C; ++c)
            p[b * C + c] = static_cast<T>(std::exp(static_cast<double>(row[c]) - m) / s);
    }
    return p;
}

template <Scalar T>
struct LossAndGrad {
    double loss = 0;
    Tensor<T> grad;
};

// Mean softmax cross-entropy over the batch, max-subtracted for stability.
// Gradient w.r.t. logits is (softmax - onehot) / B.
template <Scalar T>
LossAndGrad<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels)
{
    if (logits.rank() != 2)
        throw DimensionError("softmax_cross_entropy: expects B x C logits, got " + shape_str(logits.shape()));
    const std::size_t B = logits.dim(0), C = logits.dim(1);
    if (labels.size() != B)
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of "
                             + std::to_string(B));
    LossAndGrad<T> r;
    r.grad = Tensor<T>(logits.shape());
    double total = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const int y = labels[b];
        if (y < 0 || static_cast<std::size_t>(y) >= C)
            throw ArgumentError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, "
                                + std::to_string(C) + ")");
        const T* row = logits.data() + b * C;
        const double m = *std::max_element(row, row + C);
        double s = 0;
        for (std::size_t c = 0; c < C; ++c)
            s += std::exp(static_cast<double>(row[c]) - m);
        const double log_s = std::log(s);
        total += log_s - (static_cast<double>(row[y]) - m);
        for (std::size_t c = 0; c < C; ++c) {
            double p = std::exp(static_cast<double>(row[c]) - m - log_s);
            if (static_cast<int>(c) == y)
                p -= 1.0;
            r.grad[b * C + c] = static_cast<T>(p / static_cast<double>(B));
        }
    }
    r.loss = total / static_cast<double>(B);
    return r;
}

// Row-wise argmax; ties go to the lowest class index.
template <Scalar T>
std::vector<int> argmax_rows(const Tensor<T>& logits)
{
    const std::size_t B = logits.dim(0), C = logits.size() / logits.dim(0);
    std::vector<int> out(B);
    for (std::size_t b = 0; b < B; ++b) {
        const T* row = logits.data() + b * C;
        out[b] = static_cast<int>(std::max_element(row, row + C) - row);
    }
    return out;
}

template <Scalar T>
struct Gradients {
    ParamSet<T> params;
    Tensor<T> dinput;
};

// A gradient w.r.t. the output z_i of layer `layer`, added to whatever flows
// back from above. This is how auxiliary losses on hidden layers enter.
template <Scalar T>
struct Injection {
    std::size_t layer = 0;
    Tensor<T> grad;
};

template <Scalar T>
Gradients<T> backward(const NetworkSpec& spec, const ParamSet<T>& params, const ActivationTrace<T>& trace,
                      const Tensor<T>& dloss_dlogits, std::span<const Injection<T>> injected = {})
{
    if (trace.per_layer.size() != spec.size())
        throw DimensionError("backward: trace does not match network");
    const std::size_t B = trace.batch();
    if (dloss_dlogits.shape() != trace.logits().shape())
        throw DimensionError("backward: upstream gradient " + shape_str(dloss_dlogits.shape())
                             + " does not match logits " + shape_str(trace.logits().shape()));
    for (const auto& inj : injected) {
        if (inj.layer >= spec.size())
            throw DimensionError("backward: injection at layer " + std::to_string(inj.layer) + " out of range");
        if (inj.grad.size() != trace.per_layer[inj.layer].size() || inj.grad.dim(0) != B)
            throw DimensionError("backward: injected gradient " + shape_str(inj.grad.shape())
                                 + " does not match layer " + std::to_string(inj.layer) + " output "
                                 + shape_str(trace.per_layer[inj.layer].shape()));
    }

    Gradients<T> out;
    out.params = params.zeros_like();
    Tensor<T> g = dloss_dlogits;

    for (std::size_t i = spec.size(); i-- > 0;) {
        for (const auto& inj : injected)
            if (inj.layer == i)
                for (std::size_t k = 0; k < g.size(); ++k)
                    g[k] += inj.grad[k];

        const Tensor<T>& z = trace.per_layer[i];
        const Tensor<T>& x = trace.layer_input(i);
        const Shape in_shape = detail::batched(B, spec.input_shape_of(i));

        g = std::visit([&](const auto& l) -> Tensor<T> {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, Dense>) {
                detail::activation_backward<T>(l.activation, z.span(), g.span());
                auto& gp = out.params[i];
                detail::gemm(true, false, l.in, l.out, B, x.data(), g.data(), gp.weight.data(), false);
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t o = 0; o < l.out; ++o)
                        gp.bias[o] += g[b * l.out + o];
                Tensor<T> dx(in_shape);
                detail::gemm(false, true, B, l.in, l.out, g.data(), params[i].weight.data(), dx.data(), false);
                return dx;
            } else if constexpr (std::is_same_v<L, Conv2d>) {
                detail::activation_backward<T>(l.activation, z.span(), g.span());
                const std::size_t C = in_shape[1], H = in_shape[2], W = in_shape[3];
                const std::size_t OH = z.dim(2), OW = z.dim(3), P = OH * OW;
                const std::size_t ckk = C * l.kernel_h * l.kernel_w;
                auto& gp = out.params[i];
                Tensor<T> dx(in_shape);
                std::vector<T> col(ckk * P);
                std::vector<T> dcol(ckk * P);
                for (std::size_t b = 0; b < B; ++b) {
                    const T* gb = g.data() + b * l.out_ch * P;
                    detail::im2col(x.data() + b * C * H * W, C, H, W, l, OH, OW, col.data());
                    detail::gemm(false, true, l.out_ch, ckk, P, gb, col.data(), gp.weight.data(), true);
                    for (std::size_t oc = 0; oc < l.out_ch; ++oc)
                        for (std::size_t p = 0; p < P; ++p)
                            gp.bias[oc] += gb[oc * P + p];
                    detail::gemm(true, false, ckk, P, l.out_ch, params[i].weight.data(), gb, dcol.data(), false);
                    detail::col2im(dcol.data(), C, H, W, l, OH, OW, dx.data() + b * C * H * W);
                }
                return dx;
            } else if constexpr (std::is_same_v<L, MaxPool>) {
                Tensor<T> dx(in_shape);
                const auto& arg = trace.argmax[i];
                for (std::size_t k = 0; k < g.size(); ++k)
                    dx[arg[k]] += g[k];
                return dx;
            } else if constexpr (std::is_same_v<L, AvgPool>) {
                Tensor<T> dx(in_shape);
                const std::size_t C = in_shape[1], H = in_shape[2], W = in_shape[3];
                const std::size_t OH = z.dim(2), OW = z.dim(3);
                const T scale = T(1) / static_cast<T>(l.window * l.window);
                std::size_t o = 0;
                for (std::size_t bc = 0; bc < B * C; ++bc) {
                    T* d = dx.data() + bc * H * W;
                    for (std::size_t oy = 0; oy < OH; ++oy)
                        for (std::size_t ox = 0; ox < OW; ++ox, ++o)
                            for (std::size_t ky = 0; ky < l.window; ++ky)
                                for (std::size_t kx = 0; kx < l.window; ++kx)
                                    d[(oy * l.stride + ky) * W + ox * l.stride + kx] += g[o] * scale;
                }
                return dx;
            } else if constexpr (std::is_same_v<L, Dropout>) {
                const auto& mask = trace.dropout_mask[i];
                Tensor<T> dx = std::move(g).reshaped(in_shape);
                if (!mask.empty())
                    for (std::size_t k = 0; k < dx.size(); ++k)
                        dx[k] *= mask[k];
                return dx;
            } else {
                return std::move(g).reshaped(in_shape);
            }
        }, spec.layer(i));
    }
    out.dinput = std::move(g);
    return out;
}

// ---------------------------------------------------------------------------
// Prebuilt backbones
// ---------------------------------------------------------------------------

struct LeNetOptions {
    Shape input_shape{1, 28, 28};
    std::size_t conv1 = 6;
    std::size_t conv2 = 16;
    std::size_t conv3 = 120;
    std::size_t hidden = 84;
    std::size_t kernel = 5;
    Activation activation = Activation::Tanh;
};

// conv - avgpool - conv - avgpool - conv - dense - dense. The first conv is
// padded to keep the input extent; the third conv spans the remaining map so
// its output is 1x1.
inline NetworkSpec lenet5_spec(std::size_t num_classes, const LeNetOptions& o = {})
{
    if (num_classes < 2)
        throw ArgumentError("lenet5_spec: num_classes must be >= 2");
    if (o.input_shape.size() != 3)
        throw DimensionError("lenet5_spec: input must be CxHxW");
    const std::size_t C = o.input_shape[0], H = o.input_shape[1], W = o.input_shape[2];
    const std::size_t k = o.kernel;
    const std::size_t pad = k / 2;
    auto after_pool = [](std::size_t n) { return n >= 2 ? (n - 2) / 2 + 1 : 0; };
    const std::size_t h1 = after_pool(H + 2 * pad - k + 1), w1 = after_pool(W + 2 * pad - k + 1);
    if (h1 < k || w1 < k)
        throw DimensionError("lenet5_spec: input " + shape_str(o.input_shape) + " too small");
    const std::size_t h2 = after_pool(h1 - k + 1), w2 = after_pool(w1 - k + 1);
    std::vector<LayerSpec> layers{
        Conv2d{C, o.conv1, k, k, 1, pad, o.activation},
        AvgPool{2, 2},
        Conv2d{o.conv1, o.conv2, k, k, 1, 0, o.activation},
        AvgPool{2, 2},
        Conv2d{o.conv2, o.conv3, h2, w2, 1, 0, o.activation},
        Dense{o.conv3, o.hidden, o.activation},
        Dense{o.hidden, num_classes, Activation::Identity},
    };
    return NetworkSpec(o.input_shape, std::move(layers));
}

struct HintonOptions {
    std::size_t conv1 = 64;
    std::size_t conv2 = 64;
    std::size_t conv3 = 128;
    std::size_t kernel = 5;
    double dropout = 0.5;
    Activation activation = Activation::Relu;
};

// Three (conv, maxpool, dropout) blocks and a dense classifier. Pool windows
// are 2 on even extents and 3 on odd ones, stride 2, so every stage tiles.
inline NetworkSpec hinton_spec(std::size_t num_classes, const Shape& in_shape, const HintonOptions& o = {})
{
    if (num_classes < 2)
        throw ArgumentError("hinton_spec: num_classes must be >= 2");
    if (in_shape.size() != 3)
        throw DimensionError("hinton_spec: input must be CxHxW");
    std::vector<LayerSpec> layers;
    std::size_t ch = in_shape[0], h = in_shape[1], w = in_shape[2];
    const std::size_t widths[3] = {o.conv1, o.conv2, o.conv3};
    const std::size_t pad = o.kernel / 2;
    for (std::size_t width : widths) {
        layers.push_back(Conv2d{ch, width, o.kernel, o.kernel, 1, pad, o.activation});
        h = h + 2 * pad - o.kernel + 1;
        w = w + 2 * pad - o.kernel + 1;
        if (h != w)
            throw DimensionError("hinton_spec: square inputs only");
        const std::size_t window = h < 2 ? 1 : (h % 2 == 0 ? 2 : 3);
        const std::size_t stride = h < 2 ? 1 : 2;
        layers.push_back(MaxPool{window, stride});
        h = (h - window) / stride + 1;
        w = h;
        if (o.dropout > 0.0)
            layers.push_back(Dropout{o.dropout});
        ch = width;
    }
    layers.push_back(Dense{ch * h * w, num_classes, Activation::Identity});
    return NetworkSpec(in_shape, std::move(layers));
}

inline NetworkSpec mlp_spec(const Shape& in_shape, const std::vector<std::size_t>& hidden, std::size_t num_classes,
                            Activation activation = Activation::Relu)
{
    std::vector<LayerSpec> layers;
    std::size_t in = shape_size(in_shape);
    for (auto h : hidden) {
        layers.push_back(Dense{in, h, activation});
        in = h;
    }
    layers.push_back(Dense{in, num_classes, Activation::Identity});
    return NetworkSpec(in_shape, std::move(layers));
}

} // namespace hcl
