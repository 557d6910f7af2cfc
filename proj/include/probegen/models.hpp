#pragma once

#include <span>
#include <string>

#include "probegen/graph.hpp"

namespace probegen {

enum class Activation { None, Relu, Sine };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::None: return "none";
        case Activation::Relu: return "relu";
        case Activation::Sine: return "sine";
    }
    return "?";
}

inline Activation activation_from(const std::string& s) {
    if (s == "none") return Activation::None;
    if (s == "relu") return Activation::Relu;
    if (s == "sine") return Activation::Sine;
    throw FormatError("unknown activation '" + s + "'");
}

struct LayerSpec {
    enum class Kind { Affine, Conv, GlobalAvgPool, Flatten };
    Kind kind = Kind::Affine;
    std::size_t in = 0, out = 0;             // affine dims / conv channels
    std::size_t kernel = 0, stride = 1, pad = 0;
    Activation act = Activation::None;
    float sine_freq = 1.f;

    bool has_params() const { return kind == Kind::Affine || kind == Kind::Conv; }

    static LayerSpec affine(std::size_t in, std::size_t out, Activation act, float freq = 1.f) {
        LayerSpec l;
        l.kind = Kind::Affine;
        l.in = in;
        l.out = out;
        l.act = act;
        l.sine_freq = freq;
        return l;
    }
    static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                          std::size_t pad, Activation act) {
        LayerSpec l;
        l.kind = Kind::Conv;
        l.in = in;
        l.out = out;
        l.kernel = kernel;
        l.stride = stride;
        l.pad = pad;
        l.act = act;
        return l;
    }
    static LayerSpec global_avg_pool() {
        LayerSpec l;
        l.kind = Kind::GlobalAvgPool;
        return l;
    }
    static LayerSpec flatten() {
        LayerSpec l;
        l.kind = Kind::Flatten;
        return l;
    }
};

// Frozen-network architecture: an ordered layer list plus input/output shapes
// (shapes exclude the batch axis).
struct ArchitectureSpec {
    std::vector<LayerSpec> layers;
    Shape input_shape;
    Shape output_shape;

    // Walks the layer list and returns each layer's output shape (batch axis
    // excluded). Throws when consecutive layers do not compose.
    std::vector<Shape> layer_output_shapes() const {
        std::vector<Shape> out;
        Shape cur = input_shape;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const LayerSpec& l = layers[i];
            std::string where = "layer " + std::to_string(i);
            switch (l.kind) {
                case LayerSpec::Kind::Affine:
                    if (cur.size() != 1 || cur[0] != l.in)
                        throw ShapeError(where + " (affine): expects (" + std::to_string(l.in) +
                                         "), got " + shape_str(cur));
                    cur = {l.out};
                    break;
                case LayerSpec::Kind::Conv:
                    if (cur.size() != 3 || cur[0] != l.in)
                        throw ShapeError(where + " (conv): expects (" + std::to_string(l.in) +
                                         ",H,W), got " + shape_str(cur));
                    cur = {l.out, conv_out_extent(cur[1], l.kernel, l.stride, l.pad),
                           conv_out_extent(cur[2], l.kernel, l.stride, l.pad)};
                    break;
                case LayerSpec::Kind::GlobalAvgPool:
                    if (cur.size() != 3) throw ShapeError(where + " (gap): expects (C,H,W), got " + shape_str(cur));
                    cur = {cur[0]};
                    break;
                case LayerSpec::Kind::Flatten:
                    cur = {shape_numel(cur)};
                    break;
            }
            out.push_back(cur);
        }
        return out;
    }

    void validate() const {
        if (layers.empty()) return;
        auto shapes = layer_output_shapes();
        if (!same_shape(shapes.back(), output_shape))
            throw ShapeError("spec output " + shape_str(output_shape) + " but layers produce " +
                             shape_str(shapes.back()));
        std::size_t last_param = layers.size();
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].has_params()) last_param = i;
        if (last_param == layers.size()) throw ShapeError("spec has no output layer");
        if (layers[last_param].act != Activation::None)
            throw ShapeError("output layer must have activation 'none'");
    }

    // Coordinate INR: (x,y) in [-1,1]^2 -> intensity; sine activations with a
    // frequency multiplier on the first layer's pre-activation.
    static ArchitectureSpec inr(std::size_t hidden_layers = 3, std::size_t width = 32,
                                float omega = 30.f) {
        ArchitectureSpec s;
        s.input_shape = {2};
        s.output_shape = {1};
        std::size_t in = 2;
        for (std::size_t i = 0; i < hidden_layers; ++i) {
            s.layers.push_back(LayerSpec::affine(in, width, Activation::Sine, i == 0 ? omega : 1.f));
            in = width;
        }
        s.layers.push_back(LayerSpec::affine(in, 1, Activation::None));
        return s;
    }

    // Small image classifier: stacked 3x3 stride-1 pad-1 ReLU convs, global
    // average pool, affine to the class logits.
    static ArchitectureSpec cnn(const std::vector<std::size_t>& channels, std::size_t img_channels,
                                std::size_t img_size, std::size_t classes = 10) {
        ArchitectureSpec s;
        s.input_shape = {img_channels, img_size, img_size};
        s.output_shape = {classes};
        std::size_t in = img_channels;
        for (std::size_t c : channels) {
            s.layers.push_back(LayerSpec::conv(in, c, 3, 1, 1, Activation::Relu));
            in = c;
        }
        s.layers.push_back(LayerSpec::global_avg_pool());
        s.layers.push_back(LayerSpec::affine(in, classes, Activation::None));
        return s;
    }
};

// Per-layer weight/bias arrays ordered to match an ArchitectureSpec; layers
// without parameters hold empty arrays.
struct WeightRecord {
    std::vector<DenseArray<float>> weights;
    std::vector<DenseArray<float>> biases;
};

inline Shape layer_weight_shape(const LayerSpec& l) {
    if (l.kind == LayerSpec::Kind::Affine) return {l.out, l.in};
    if (l.kind == LayerSpec::Kind::Conv) return {l.out, l.in, l.kernel, l.kernel};
    return {};
}

inline Shape layer_bias_shape(const LayerSpec& l) {
    if (l.has_params()) return {l.out};
    return {};
}

struct ProbedModel {
    ArchitectureSpec spec;
    WeightRecord weights;
    std::string id;

    void validate() const {
        spec.validate();
        if (weights.weights.size() != spec.layers.size() || weights.biases.size() != spec.layers.size())
            throw ShapeError("model '" + id + "': weight record has " +
                             std::to_string(weights.weights.size()) + " layers, spec has " +
                             std::to_string(spec.layers.size()));
        for (std::size_t i = 0; i < spec.layers.size(); ++i) {
            if (!same_shape(weights.weights[i].shape, layer_weight_shape(spec.layers[i])) ||
                !same_shape(weights.biases[i].shape, layer_bias_shape(spec.layers[i])))
                throw ShapeError("model '" + id + "' layer " + std::to_string(i) +
                                 ": weight shapes do not match the spec");
            if (!weights.weights[i].all_finite() || !weights.biases[i].all_finite())
                throw NumericError("model '" + id + "' layer " + std::to_string(i) +
                                   ": non-finite weights");
        }
    }
};

inline std::size_t count_parameters(const ProbedModel& m) {
    std::size_t n = 0;
    for (const auto& w : m.weights.weights) n += w.size();
    for (const auto& b : m.weights.biases) n += b.size();
    return n;
}

// Appends the frozen forward pass of `model` to `g`, starting from `input`
// (shape (B, ...input_shape)). Gradients flow through the weights to the
// input, but the weight nodes are frozen. Returns the output node (B, out).
template <typename T>
typename Graph<T>::NodeId append_model_forward(Graph<T>& g, const ProbedModel& model,
                                               typename Graph<T>::NodeId input) {
    using NodeId = typename Graph<T>::NodeId;
    const Shape& in_shape = g.shape_of(input);
    Shape expect = model.spec.input_shape;
    expect.insert(expect.begin(), in_shape.empty() ? 0 : in_shape[0]);
    if (!same_shape(in_shape, expect))
        throw ShapeError("model '" + model.id + "': input " + shape_str(in_shape) + ", expected " +
                         shape_str(expect));
    NodeId cur = input;
    for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
        const LayerSpec& l = model.spec.layers[i];
        std::string tag = model.id + ":layer" + std::to_string(i);
        switch (l.kind) {
            case LayerSpec::Kind::Affine: {
                NodeId w, b;
                if constexpr (std::is_same_v<T, float>) {
                    w = g.parameter(model.weights.weights[i], tag + ":w", true, true);
                    b = g.parameter(model.weights.biases[i], tag + ":b", true, true);
                } else {
                    w = g.parameter(model.weights.weights[i].template cast<T>(), tag + ":w", true, true);
                    b = g.parameter(model.weights.biases[i].template cast<T>(), tag + ":b", true, true);
                }
                cur = g.affine(cur, w, b, tag);
                break;
            }
            case LayerSpec::Kind::Conv: {
                NodeId w, b;
                if constexpr (std::is_same_v<T, float>) {
                    w = g.parameter(model.weights.weights[i], tag + ":w", true, true);
                    b = g.parameter(model.weights.biases[i], tag + ":b", true, true);
                } else {
                    w = g.parameter(model.weights.weights[i].template cast<T>(), tag + ":w", true, true);
                    b = g.parameter(model.weights.biases[i].template cast<T>(), tag + ":b", true, true);
                }
                cur = g.conv2d(cur, w, b, l.stride, l.pad, tag);
                break;
            }
            case LayerSpec::Kind::GlobalAvgPool:
                cur = g.mean_axis(cur, 3, tag + ":gap_w");
                cur = g.mean_axis(cur, 2, tag + ":gap_h");
                break;
            case LayerSpec::Kind::Flatten: {
                const Shape& s = g.shape_of(cur);
                Shape flat = {s[0], shape_numel(Shape(s.begin() + 1, s.end()))};
                cur = g.reshape(cur, flat, tag);
                break;
            }
        }
        if (l.act == Activation::Relu) cur = g.relu(cur, tag + ":relu");
        else if (l.act == Activation::Sine) cur = g.sine(cur, static_cast<T>(l.sine_freq), tag + ":sine");
    }
    return cur;
}

// Convenience forward pass on a batch of inputs; T selects the computation
// precision (weights are widened from their stored 32-bit form).
template <typename T>
DenseArray<T> model_forward_t(const ProbedModel& model, const DenseArray<T>& batch) {
    Graph<T> g;
    auto in = g.input(batch.shape, "input");
    auto out = append_model_forward(g, model, in);
    g.evaluate({{in, &batch}});
    return g.value(out);
}

inline DenseArray<float> model_forward(const ProbedModel& model, const DenseArray<float>& batch) {
    return model_forward_t<float>(model, batch);
}

// Permutes the output units (affine) or channels (conv) of a hidden layer and
// inverse-permutes the next parameterized layer's inputs, producing a
// functionally identical model. `perm[r]` is the new position of unit r.
inline ProbedModel permute_hidden_neurons(const ProbedModel& model, std::size_t layer_index,
                                          std::span<const std::size_t> perm) {
    const auto& layers = model.spec.layers;
    if (layer_index >= layers.size() || !layers[layer_index].has_params())
        throw ShapeError("permute: layer " + std::to_string(layer_index) + " has no units");
    std::size_t next = layer_index + 1;
    while (next < layers.size() && !layers[next].has_params()) ++next;
    if (next >= layers.size())
        throw ShapeError("permute: layer " + std::to_string(layer_index) + " is the output layer");
    std::size_t units = layers[layer_index].out;
    if (perm.size() != units)
        throw ShapeError("permute: permutation length " + std::to_string(perm.size()) + " != " +
                         std::to_string(units) + " units");
    std::vector<bool> seen(units, false);
    for (std::size_t p : perm) {
        if (p >= units || seen[p]) throw ShapeError("permute: not a bijection");
        seen[p] = true;
    }

    ProbedModel out = model;
    const LayerSpec& l = layers[layer_index];
    const auto& w = model.weights.weights[layer_index];
    const auto& b = model.weights.biases[layer_index];
    auto& wp = out.weights.weights[layer_index];
    auto& bp = out.weights.biases[layer_index];
    std::size_t row = w.size() / units;  // affine: in; conv: in*k*k
    for (std::size_t r = 0; r < units; ++r) {
        std::copy_n(w.ptr() + r * row, row, wp.ptr() + perm[r] * row);
        bp.data[perm[r]] = b.data[r];
    }

    // Inverse-permute the consumer's input columns / channels. A flatten (or
    // gap) between the layers groups columns by channel.
    const LayerSpec& nl = layers[next];
    const auto& nw = model.weights.weights[next];
    auto& nwp = out.weights.weights[next];
    if (nl.kind == LayerSpec::Kind::Conv) {
        std::size_t cout = nl.out, k2 = nl.kernel * nl.kernel;
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t ci = 0; ci < units; ++ci)
                std::copy_n(nw.ptr() + (co * units + ci) * k2, k2,
                            nwp.ptr() + (co * units + perm[ci]) * k2);
    } else {
        std::size_t block = nl.in / units;  // 1 after gap, H*W after flatten
        if (block * units != nl.in)
            throw ShapeError("permute: consumer input dim " + std::to_string(nl.in) +
                             " is not grouped by " + std::to_string(units) + " units");
        for (std::size_t o = 0; o < nl.out; ++o)
            for (std::size_t ci = 0; ci < units; ++ci)
                std::copy_n(nw.ptr() + o * nl.in + ci * block, block,
                            nwp.ptr() + o * nl.in + perm[ci] * block);
    }
    return out;
}

// Seeded weight initialization. Sine layers follow the usual coordinate-MLP
// recipe (uniform 1/fan_in on the frequency-scaled first layer, sqrt(6/fan_in)
// afterwards); ReLU and linear layers use He-style uniform bounds. `scale`
// multiplies every bound.
inline WeightRecord init_weights(const ArchitectureSpec& spec, Rng& rng, double scale = 1.0) {
    WeightRecord rec;
    bool first_param = true;
    for (const LayerSpec& l : spec.layers) {
        if (!l.has_params()) {
            rec.weights.emplace_back();
            rec.biases.emplace_back();
            continue;
        }
        double fan_in = l.kind == LayerSpec::Kind::Affine
                            ? static_cast<double>(l.in)
                            : static_cast<double>(l.in * l.kernel * l.kernel);
        double bound;
        if (l.act == Activation::Sine && first_param && l.sine_freq != 1.f) bound = 1.0 / fan_in;
        else bound = std::sqrt(6.0 / fan_in);
        DenseArray<float> w(layer_weight_shape(l));
        rng.fill_uniform(w, -bound * scale, bound * scale);
        DenseArray<float> b(layer_bias_shape(l));
        double bb = 1.0 / std::sqrt(fan_in);
        rng.fill_uniform(b, -bb * scale, bb * scale);
        rec.weights.push_back(std::move(w));
        rec.biases.push_back(std::move(b));
        first_param = false;
    }
    return rec;
}

}  // namespace probegen
