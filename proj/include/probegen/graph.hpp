#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "probegen/array.hpp"
#include "probegen/kernels.hpp"
#include "probegen/rng.hpp"

namespace probegen {

enum class OpKind {
    Input,
    Param,
    Affine,
    Conv2d,
    ConvTranspose2d,
    Sine,
    Relu,
    Reshape,
    Concat,
    Softmax,
    CrossEntropyLoss,
    MseLoss,
    MeanAxis,
};

inline const char* op_kind_name(OpKind k) {
    switch (k) {
        case OpKind::Input: return "input";
        case OpKind::Param: return "param";
        case OpKind::Affine: return "affine";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::ConvTranspose2d: return "conv_transpose2d";
        case OpKind::Sine: return "sine";
        case OpKind::Relu: return "relu";
        case OpKind::Reshape: return "reshape";
        case OpKind::Concat: return "concat";
        case OpKind::Softmax: return "softmax";
        case OpKind::CrossEntropyLoss: return "cross_entropy_loss";
        case OpKind::MseLoss: return "mse_loss";
        case OpKind::MeanAxis: return "mean_axis";
    }
    return "?";
}

// Append-only reverse-mode tape over DenseArray values. Nodes reference only
// earlier nodes, so creation order is a topological order; forward walks it
// once, backward walks it in reverse. Parameters live in the graph and can be
// updated in place between evaluations (the optimizer does exactly that).
template <typename T>
class Graph {
  public:
    using NodeId = std::size_t;
    using Bindings = std::unordered_map<NodeId, const DenseArray<T>*>;

    NodeId input(Shape shape, std::string name = "") {
        Node n;
        n.kind = OpKind::Input;
        n.shape = std::move(shape);
        return push(std::move(n), std::move(name));
    }

    NodeId parameter(DenseArray<T> value, std::string name = "", bool trainable = true,
                     bool frozen = false) {
        Node n;
        n.kind = OpKind::Param;
        n.shape = value.shape;
        n.value = std::move(value);
        n.has_value = true;
        n.trainable = trainable && !frozen;
        n.frozen = frozen;
        return push(std::move(n), std::move(name));
    }

    // y = x * W^T + b with x:(B,in), W:(out,in), b:(out)
    NodeId affine(NodeId x, NodeId w, NodeId b, std::string name = "") {
        const Shape& xs = shape_of(x);
        const Shape& ws = shape_of(w);
        const Shape& bs = shape_of(b);
        if (xs.size() != 2 || ws.size() != 2 || bs.size() != 1 || xs[1] != ws[1] || ws[0] != bs[0])
            throw ShapeError("affine '" + name + "': x" + shape_str(xs) + " W" + shape_str(ws) +
                             " b" + shape_str(bs));
        Node n;
        n.kind = OpKind::Affine;
        n.inputs = {x, w, b};
        n.shape = {xs[0], ws[0]};
        return push(std::move(n), std::move(name));
    }

    // x:(B,Cin,H,W), kernel:(Cout,Cin,k,k), b:(Cout)
    NodeId conv2d(NodeId x, NodeId kern, NodeId b, std::size_t stride, std::size_t pad,
                  std::string name = "") {
        const Shape& xs = shape_of(x);
        const Shape& ks = shape_of(kern);
        const Shape& bs = shape_of(b);
        if (xs.size() != 4 || ks.size() != 4 || bs.size() != 1 || ks[2] != ks[3] || xs[1] != ks[1] ||
            bs[0] != ks[0] || xs[2] + 2 * pad < ks[2] || xs[3] + 2 * pad < ks[3])
            throw ShapeError("conv2d '" + name + "': x" + shape_str(xs) + " k" + shape_str(ks) +
                             " b" + shape_str(bs));
        Node n;
        n.kind = OpKind::Conv2d;
        n.inputs = {x, kern, b};
        n.stride = stride;
        n.pad = pad;
        n.shape = {xs[0], ks[0], conv_out_extent(xs[2], ks[2], stride, pad),
                   conv_out_extent(xs[3], ks[3], stride, pad)};
        return push(std::move(n), std::move(name));
    }

    // x:(B,Cin,H,W), kernel:(Cin,Cout,k,k), b:(Cout)
    NodeId conv_transpose2d(NodeId x, NodeId kern, NodeId b, std::size_t stride, std::size_t pad,
                            std::string name = "") {
        const Shape& xs = shape_of(x);
        const Shape& ks = shape_of(kern);
        const Shape& bs = shape_of(b);
        if (xs.size() != 4 || ks.size() != 4 || bs.size() != 1 || ks[2] != ks[3] || xs[1] != ks[0] ||
            bs[0] != ks[1] || (xs[2] - 1) * stride + ks[2] < 2 * pad + 1)
            throw ShapeError("conv_transpose2d '" + name + "': x" + shape_str(xs) + " k" +
                             shape_str(ks) + " b" + shape_str(bs));
        Node n;
        n.kind = OpKind::ConvTranspose2d;
        n.inputs = {x, kern, b};
        n.stride = stride;
        n.pad = pad;
        n.shape = {xs[0], ks[1], conv_transpose_out_extent(xs[2], ks[2], stride, pad),
                   conv_transpose_out_extent(xs[3], ks[3], stride, pad)};
        return push(std::move(n), std::move(name));
    }

    // y = sin(freq * x), elementwise
    NodeId sine(NodeId x, T freq = T(1), std::string name = "") {
        Node n;
        n.kind = OpKind::Sine;
        n.inputs = {x};
        n.freq = freq;
        n.shape = shape_of(x);
        return push(std::move(n), std::move(name));
    }

    NodeId relu(NodeId x, std::string name = "") {
        Node n;
        n.kind = OpKind::Relu;
        n.inputs = {x};
        n.shape = shape_of(x);
        return push(std::move(n), std::move(name));
    }

    NodeId reshape(NodeId x, Shape target, std::string name = "") {
        if (shape_numel(target) != shape_numel(shape_of(x)))
            throw ShapeError("reshape '" + name + "': " + shape_str(shape_of(x)) + " -> " +
                             shape_str(target));
        Node n;
        n.kind = OpKind::Reshape;
        n.inputs = {x};
        n.shape = std::move(target);
        return push(std::move(n), std::move(name));
    }

    NodeId concat(const std::vector<NodeId>& xs, std::size_t axis, std::string name = "") {
        if (xs.empty()) throw ShapeError("concat '" + name + "': no inputs");
        Shape out = shape_of(xs[0]);
        if (axis >= out.size()) throw ShapeError("concat '" + name + "': bad axis");
        for (std::size_t j = 1; j < xs.size(); ++j) {
            const Shape& s = shape_of(xs[j]);
            if (s.size() != out.size())
                throw ShapeError("concat '" + name + "': rank mismatch " + shape_str(s));
            for (std::size_t a = 0; a < s.size(); ++a) {
                if (a == axis) continue;
                if (s[a] != out[a])
                    throw ShapeError("concat '" + name + "': " + shape_str(s) + " vs " +
                                     shape_str(out) + " at axis " + std::to_string(a));
            }
            out[axis] += s[axis];
        }
        Node n;
        n.kind = OpKind::Concat;
        n.inputs = xs;
        n.axis = axis;
        n.shape = std::move(out);
        return push(std::move(n), std::move(name));
    }

    // softmax over the last axis
    NodeId softmax(NodeId x, std::string name = "") {
        if (shape_of(x).empty()) throw ShapeError("softmax '" + name + "': rank-0 input");
        Node n;
        n.kind = OpKind::Softmax;
        n.inputs = {x};
        n.shape = shape_of(x);
        return push(std::move(n), std::move(name));
    }

    // logits:(B,C), targets:(B) holding integral class indices; scalar mean loss
    NodeId cross_entropy_loss(NodeId logits, NodeId targets, std::string name = "") {
        const Shape& ls = shape_of(logits);
        const Shape& ts = shape_of(targets);
        if (ls.size() != 2 || ts.size() != 1 || ts[0] != ls[0])
            throw ShapeError("cross_entropy_loss '" + name + "': logits" + shape_str(ls) +
                             " targets" + shape_str(ts));
        Node n;
        n.kind = OpKind::CrossEntropyLoss;
        n.inputs = {logits, targets};
        n.shape = {1};
        return push(std::move(n), std::move(name));
    }

    // scalar mean of squared differences
    NodeId mse_loss(NodeId pred, NodeId target, std::string name = "") {
        if (!same_shape(shape_of(pred), shape_of(target)))
            throw ShapeError("mse_loss '" + name + "': " + shape_str(shape_of(pred)) + " vs " +
                             shape_str(shape_of(target)));
        Node n;
        n.kind = OpKind::MseLoss;
        n.inputs = {pred, target};
        n.shape = {1};
        return push(std::move(n), std::move(name));
    }

    NodeId mean_axis(NodeId x, std::size_t axis, std::string name = "") {
        const Shape& xs = shape_of(x);
        if (axis >= xs.size()) throw ShapeError("mean_axis '" + name + "': bad axis");
        Shape out;
        for (std::size_t a = 0; a < xs.size(); ++a)
            if (a != axis) out.push_back(xs[a]);
        Node n;
        n.kind = OpKind::MeanAxis;
        n.inputs = {x};
        n.axis = axis;
        n.shape = std::move(out);
        return push(std::move(n), std::move(name));
    }

    std::size_t node_count() const { return nodes_.size(); }
    const Shape& shape_of(NodeId id) const { return at(id).shape; }
    const std::string& name_of(NodeId id) const { return at(id).name; }
    bool is_frozen(NodeId id) const { return at(id).frozen; }

    std::vector<NodeId> trainable_params() const {
        std::vector<NodeId> out;
        for (NodeId i = 0; i < nodes_.size(); ++i)
            if (nodes_[i].trainable) out.push_back(i);
        return out;
    }

    std::vector<NodeId> all_params() const {
        std::vector<NodeId> out;
        for (NodeId i = 0; i < nodes_.size(); ++i)
            if (nodes_[i].kind == OpKind::Param) out.push_back(i);
        return out;
    }

    // Mutable access to a parameter's storage; invalidates cached activations.
    DenseArray<T>& param_value(NodeId id) {
        Node& n = at(id);
        if (n.kind != OpKind::Param) throw StateError("param_value: node '" + n.name + "' is not a parameter");
        forward_done_ = false;
        return n.value;
    }

    void evaluate(const Bindings& bindings = {}) {
        for (Node& n : nodes_) {
            if (n.kind == OpKind::Input) {
                auto it = bindings.find(n.id);
                if (it == bindings.end())
                    throw StateError("evaluate: input '" + n.name + "' not bound");
                if (!same_shape(it->second->shape, n.shape))
                    throw ShapeError("evaluate: input '" + n.name + "' expects " + shape_str(n.shape) +
                                     ", got " + shape_str(it->second->shape));
                n.value = *it->second;
                n.has_value = true;
            } else if (n.kind != OpKind::Param) {
                forward_op(n);
                n.has_value = true;
            }
            check_finite(n);
        }
        forward_done_ = true;
        backward_done_ = false;
    }

    const DenseArray<T>& value(NodeId id) const {
        const Node& n = at(id);
        if (!n.has_value) throw StateError("value: node '" + n.name + "' has not been evaluated");
        return n.value;
    }

    void backward(NodeId loss) {
        if (!forward_done_) throw StateError("backward: evaluate has not been run");
        const Node& ln = at(loss);
        if (shape_numel(ln.shape) != 1)
            throw StateError("backward: loss node '" + ln.name + "' is not scalar");
        for (Node& n : nodes_) {
            n.grad.shape = n.shape;
            n.grad.data.assign(shape_numel(n.shape), T(0));
        }
        at(loss).grad.data[0] = T(1);
        for (std::size_t i = nodes_.size(); i-- > 0;) backward_op(nodes_[i]);
        backward_done_ = true;
    }

    const DenseArray<T>& grad(NodeId id) const {
        if (!backward_done_) throw StateError("grad: backward has not been run");
        return at(id).grad;
    }

    // Central-difference check over randomly sampled parameter coordinates;
    // returns max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    double check_gradients(NodeId loss, const Bindings& bindings, double step, std::size_t samples,
                           Rng& rng) {
        evaluate(bindings);
        backward(loss);
        std::vector<NodeId> params = all_params();
        std::vector<DenseArray<T>> analytic;
        analytic.reserve(params.size());
        for (NodeId p : params) analytic.push_back(at(p).grad);
        std::vector<NodeId> nonempty;
        for (std::size_t j = 0; j < params.size(); ++j)
            if (analytic[j].size() > 0) nonempty.push_back(j);
        if (nonempty.empty()) return 0.0;

        double worst = 0.0;
        for (std::size_t s = 0; s < samples; ++s) {
            std::size_t j = nonempty[rng.uniform_index(nonempty.size())];
            NodeId p = params[j];
            std::size_t i = rng.uniform_index(analytic[j].size());
            T orig = at(p).value.data[i];
            at(p).value.data[i] = orig + static_cast<T>(step);
            evaluate(bindings);
            double lp = static_cast<double>(value(loss).data[0]);
            at(p).value.data[i] = orig - static_cast<T>(step);
            evaluate(bindings);
            double lm = static_cast<double>(value(loss).data[0]);
            at(p).value.data[i] = orig;
            double numeric = (lp - lm) / (2.0 * step);
            double a = static_cast<double>(analytic[j].data[i]);
            double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, rel);
        }
        evaluate(bindings);
        return worst;
    }

  private:
    struct Node {
        OpKind kind;
        std::string name;
        NodeId id = 0;
        std::vector<NodeId> inputs;
        Shape shape;
        std::size_t stride = 1, pad = 0, axis = 0;
        T freq = T(1);
        DenseArray<T> value;
        DenseArray<T> grad;
        bool has_value = false;
        bool trainable = false;
        bool frozen = false;
    };

    std::vector<Node> nodes_;
    bool forward_done_ = false;
    bool backward_done_ = false;

    Node& at(NodeId id) { return nodes_.at(id); }
    const Node& at(NodeId id) const { return nodes_.at(id); }

    NodeId push(Node&& n, std::string name) {
        n.id = nodes_.size();
        n.name = name.empty() ? std::string(op_kind_name(n.kind)) + "#" + std::to_string(n.id)
                              : std::move(name);
        for (NodeId in : n.inputs)
            if (in >= n.id) throw StateError("node '" + n.name + "' references a later node");
        if (n.kind != OpKind::Param && n.kind != OpKind::Input) {
            n.value.shape = n.shape;
            n.value.data.assign(shape_numel(n.shape), T(0));
        }
        forward_done_ = false;
        nodes_.push_back(std::move(n));
        return nodes_.back().id;
    }

    void check_finite(const Node& n) {
        for (const T& v : n.value.data)
            if (!std::isfinite(static_cast<double>(v)))
                throw NumericError("overflow: non-finite value in node '" + n.name + "'");
    }

    const DenseArray<T>& in_val(const Node& n, std::size_t i) const { return at(n.inputs[i]).value; }
    DenseArray<T>& in_grad(Node& n, std::size_t i) { return at(n.inputs[i]).grad; }

    void forward_op(Node& n) {
        switch (n.kind) {
            case OpKind::Affine: {
                const auto& x = in_val(n, 0);
                const auto& w = in_val(n, 1);
                const auto& b = in_val(n, 2);
                std::size_t B = x.shape[0], in = x.shape[1], out = w.shape[0];
                gemm_nt(B, out, in, x.ptr(), w.ptr(), n.value.ptr());
                for (std::size_t r = 0; r < B; ++r)
                    for (std::size_t c = 0; c < out; ++c) n.value.data[r * out + c] += b.data[c];
                break;
            }
            case OpKind::Conv2d: {
                const auto& x = in_val(n, 0);
                const auto& k = in_val(n, 1);
                const auto& b = in_val(n, 2);
                std::size_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
                std::size_t Cout = k.shape[0], ks = k.shape[2];
                std::size_t Ho = n.shape[2], Wo = n.shape[3];
                std::size_t cols_len = Ho * Wo * Cin * ks * ks;
                scratch_.resize(cols_len);
                for (std::size_t img = 0; img < B; ++img) {
                    const T* xb = x.ptr() + img * Cin * H * W;
                    T* yb = n.value.ptr() + img * Cout * Ho * Wo;
                    im2col(xb, Cin, H, W, ks, n.stride, n.pad, scratch_.data());
                    gemm_nt(Cout, Ho * Wo, Cin * ks * ks, k.ptr(), scratch_.data(), yb);
                    for (std::size_t c = 0; c < Cout; ++c)
                        for (std::size_t p = 0; p < Ho * Wo; ++p) yb[c * Ho * Wo + p] += b.data[c];
                }
                break;
            }
            case OpKind::ConvTranspose2d: {
                const auto& x = in_val(n, 0);
                const auto& k = in_val(n, 1);
                const auto& b = in_val(n, 2);
                std::size_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
                std::size_t Cout = k.shape[1], ks = k.shape[2];
                std::size_t Ho = n.shape[2], Wo = n.shape[3];
                std::size_t cols_len = H * W * Cout * ks * ks;
                scratch_.resize(cols_len);
                std::fill(n.value.data.begin(), n.value.data.end(), T(0));
                for (std::size_t img = 0; img < B; ++img) {
                    const T* xb = x.ptr() + img * Cin * H * W;
                    T* yb = n.value.ptr() + img * Cout * Ho * Wo;
                    gemm_tn(H * W, Cout * ks * ks, Cin, xb, k.ptr(), scratch_.data());
                    col2im(scratch_.data(), Cout, Ho, Wo, ks, n.stride, n.pad, yb);
                    for (std::size_t c = 0; c < Cout; ++c)
                        for (std::size_t p = 0; p < Ho * Wo; ++p) yb[c * Ho * Wo + p] += b.data[c];
                }
                break;
            }
            case OpKind::Sine: {
                const auto& x = in_val(n, 0);
                for (std::size_t i = 0; i < x.size(); ++i)
                    n.value.data[i] = std::sin(n.freq * x.data[i]);
                break;
            }
            case OpKind::Relu: {
                const auto& x = in_val(n, 0);
                for (std::size_t i = 0; i < x.size(); ++i)
                    n.value.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
                break;
            }
            case OpKind::Reshape: {
                n.value.data = in_val(n, 0).data;
                break;
            }
            case OpKind::Concat: {
                std::size_t outer = 1;
                for (std::size_t a = 0; a < n.axis; ++a) outer *= n.shape[a];
                std::size_t tail = 1;
                for (std::size_t a = n.axis + 1; a < n.shape.size(); ++a) tail *= n.shape[a];
                std::size_t total_inner = n.shape[n.axis] * tail;
                std::size_t offset = 0;
                for (NodeId src : n.inputs) {
                    const auto& x = at(src).value;
                    std::size_t inner = x.shape[n.axis] * tail;
                    for (std::size_t o = 0; o < outer; ++o)
                        std::copy_n(x.ptr() + o * inner, inner,
                                    n.value.ptr() + o * total_inner + offset);
                    offset += inner;
                }
                break;
            }
            case OpKind::Softmax: {
                const auto& x = in_val(n, 0);
                std::size_t C = n.shape.back();
                std::size_t rows = x.size() / C;
                for (std::size_t r = 0; r < rows; ++r) {
                    const T* xr = x.ptr() + r * C;
                    T* yr = n.value.ptr() + r * C;
                    T m = xr[0];
                    for (std::size_t c = 1; c < C; ++c) m = std::max(m, xr[c]);
                    T sum = T(0);
                    for (std::size_t c = 0; c < C; ++c) {
                        yr[c] = std::exp(xr[c] - m);
                        sum += yr[c];
                    }
                    for (std::size_t c = 0; c < C; ++c) yr[c] /= sum;
                }
                break;
            }
            case OpKind::CrossEntropyLoss: {
                const auto& x = in_val(n, 0);
                const auto& t = in_val(n, 1);
                std::size_t B = x.shape[0], C = x.shape[1];
                double loss = 0.0;
                for (std::size_t r = 0; r < B; ++r) {
                    std::size_t cls = class_index(n, t.data[r], C);
                    const T* xr = x.ptr() + r * C;
                    T m = xr[0];
                    for (std::size_t c = 1; c < C; ++c) m = std::max(m, xr[c]);
                    double sum = 0.0;
                    for (std::size_t c = 0; c < C; ++c) sum += std::exp(static_cast<double>(xr[c] - m));
                    loss += static_cast<double>(m) + std::log(sum) - static_cast<double>(xr[cls]);
                }
                n.value.data[0] = static_cast<T>(loss / static_cast<double>(B));
                break;
            }
            case OpKind::MseLoss: {
                const auto& a = in_val(n, 0);
                const auto& b = in_val(n, 1);
                double sum = 0.0;
                for (std::size_t i = 0; i < a.size(); ++i) {
                    double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
                    sum += d * d;
                }
                n.value.data[0] = static_cast<T>(sum / static_cast<double>(a.size()));
                break;
            }
            case OpKind::MeanAxis: {
                const auto& x = in_val(n, 0);
                std::size_t outer = 1;
                for (std::size_t a = 0; a < n.axis; ++a) outer *= x.shape[a];
                std::size_t ext = x.shape[n.axis];
                std::size_t inner = x.size() / (outer * ext);
                for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t i = 0; i < inner; ++i) {
                        T acc = T(0);
                        for (std::size_t e = 0; e < ext; ++e)
                            acc += x.data[(o * ext + e) * inner + i];
                        n.value.data[o * inner + i] = acc / static_cast<T>(ext);
                    }
                }
                break;
            }
            case OpKind::Input:
            case OpKind::Param:
                break;
        }
    }

    void backward_op(Node& n) {
        bool any = false;
        for (const T& g : n.grad.data)
            if (g != T(0)) {
                any = true;
                break;
            }
        if (!any) return;
        switch (n.kind) {
            case OpKind::Affine: {
                const auto& x = in_val(n, 0);
                const auto& w = in_val(n, 1);
                std::size_t B = x.shape[0], in = x.shape[1], out = w.shape[0];
                // dx += dy * W
                gemm_nn(B, in, out, n.grad.ptr(), w.ptr(), in_grad(n, 0).ptr(), true);
                // dW += dy^T * x
                gemm_tn(out, in, B, n.grad.ptr(), x.ptr(), in_grad(n, 1).ptr(), true);
                auto& db = in_grad(n, 2);
                for (std::size_t r = 0; r < B; ++r)
                    for (std::size_t c = 0; c < out; ++c) db.data[c] += n.grad.data[r * out + c];
                break;
            }
            case OpKind::Conv2d: {
                const auto& x = in_val(n, 0);
                const auto& k = in_val(n, 1);
                std::size_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
                std::size_t Cout = k.shape[0], ks = k.shape[2];
                std::size_t Ho = n.shape[2], Wo = n.shape[3];
                std::size_t cols_len = Ho * Wo * Cin * ks * ks;
                scratch_.resize(cols_len);
                scratch2_.resize(cols_len);
                auto& dx = in_grad(n, 0);
                auto& dk = in_grad(n, 1);
                auto& db = in_grad(n, 2);
                for (std::size_t img = 0; img < B; ++img) {
                    const T* xb = x.ptr() + img * Cin * H * W;
                    const T* gyb = n.grad.ptr() + img * Cout * Ho * Wo;
                    im2col(xb, Cin, H, W, ks, n.stride, n.pad, scratch_.data());
                    // dK += dy_b * cols
                    gemm_nn(Cout, Cin * ks * ks, Ho * Wo, gyb, scratch_.data(), dk.ptr(), true);
                    // dcols = dy_b^T * K
                    gemm_tn(Ho * Wo, Cin * ks * ks, Cout, gyb, k.ptr(), scratch2_.data());
                    col2im(scratch2_.data(), Cin, H, W, ks, n.stride, n.pad,
                           dx.ptr() + img * Cin * H * W);
                    for (std::size_t c = 0; c < Cout; ++c)
                        for (std::size_t p = 0; p < Ho * Wo; ++p) db.data[c] += gyb[c * Ho * Wo + p];
                }
                break;
            }
            case OpKind::ConvTranspose2d: {
                const auto& x = in_val(n, 0);
                const auto& k = in_val(n, 1);
                std::size_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
                std::size_t Cout = k.shape[1], ks = k.shape[2];
                std::size_t Ho = n.shape[2], Wo = n.shape[3];
                std::size_t cols_len = H * W * Cout * ks * ks;
                scratch_.resize(cols_len);
                auto& dx = in_grad(n, 0);
                auto& dk = in_grad(n, 1);
                auto& db = in_grad(n, 2);
                for (std::size_t img = 0; img < B; ++img) {
                    const T* xb = x.ptr() + img * Cin * H * W;
                    const T* gyb = n.grad.ptr() + img * Cout * Ho * Wo;
                    // dcols = im2col(dy_b)
                    im2col(gyb, Cout, Ho, Wo, ks, n.stride, n.pad, scratch_.data());
                    // dx_b += K * dcols^T
                    gemm_nt(Cin, H * W, Cout * ks * ks, k.ptr(), scratch_.data(),
                            dx.ptr() + img * Cin * H * W, true);
                    // dK += x_b * dcols
                    gemm_nn(Cin, Cout * ks * ks, H * W, xb, scratch_.data(), dk.ptr(), true);
                    for (std::size_t c = 0; c < Cout; ++c)
                        for (std::size_t p = 0; p < Ho * Wo; ++p) db.data[c] += gyb[c * Ho * Wo + p];
                }
                break;
            }
            case OpKind::Sine: {
                const auto& x = in_val(n, 0);
                auto& dx = in_grad(n, 0);
                for (std::size_t i = 0; i < x.size(); ++i)
                    dx.data[i] += n.grad.data[i] * n.freq * std::cos(n.freq * x.data[i]);
                break;
            }
            case OpKind::Relu: {
                const auto& x = in_val(n, 0);
                auto& dx = in_grad(n, 0);
                // subgradient at 0 is 0
                for (std::size_t i = 0; i < x.size(); ++i)
                    if (x.data[i] > T(0)) dx.data[i] += n.grad.data[i];
                break;
            }
            case OpKind::Reshape: {
                auto& dx = in_grad(n, 0);
                for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += n.grad.data[i];
                break;
            }
            case OpKind::Concat: {
                std::size_t outer = 1;
                for (std::size_t a = 0; a < n.axis; ++a) outer *= n.shape[a];
                std::size_t tail = 1;
                for (std::size_t a = n.axis + 1; a < n.shape.size(); ++a) tail *= n.shape[a];
                std::size_t total_inner = n.shape[n.axis] * tail;
                std::size_t offset = 0;
                for (NodeId src : n.inputs) {
                    auto& dx = at(src).grad;
                    std::size_t inner = at(src).shape[n.axis] * tail;
                    for (std::size_t o = 0; o < outer; ++o) {
                        const T* g = n.grad.ptr() + o * total_inner + offset;
                        T* d = dx.ptr() + o * inner;
                        for (std::size_t i = 0; i < inner; ++i) d[i] += g[i];
                    }
                    offset += inner;
                }
                break;
            }
            case OpKind::Softmax: {
                auto& dx = in_grad(n, 0);
                std::size_t C = n.shape.back();
                std::size_t rows = n.value.size() / C;
                for (std::size_t r = 0; r < rows; ++r) {
                    const T* y = n.value.ptr() + r * C;
                    const T* g = n.grad.ptr() + r * C;
                    T dot = T(0);
                    for (std::size_t c = 0; c < C; ++c) dot += g[c] * y[c];
                    T* d = dx.ptr() + r * C;
                    for (std::size_t c = 0; c < C; ++c) d[c] += y[c] * (g[c] - dot);
                }
                break;
            }
            case OpKind::CrossEntropyLoss: {
                const auto& x = in_val(n, 0);
                const auto& t = in_val(n, 1);
                auto& dx = in_grad(n, 0);
                std::size_t B = x.shape[0], C = x.shape[1];
                T g = n.grad.data[0] / static_cast<T>(B);
                for (std::size_t r = 0; r < B; ++r) {
                    std::size_t cls = class_index(n, t.data[r], C);
                    const T* xr = x.ptr() + r * C;
                    T m = xr[0];
                    for (std::size_t c = 1; c < C; ++c) m = std::max(m, xr[c]);
                    double sum = 0.0;
                    for (std::size_t c = 0; c < C; ++c) sum += std::exp(static_cast<double>(xr[c] - m));
                    for (std::size_t c = 0; c < C; ++c) {
                        double p = std::exp(static_cast<double>(xr[c] - m)) / sum;
                        double onehot = (c == cls) ? 1.0 : 0.0;
                        dx.data[r * C + c] += g * static_cast<T>(p - onehot);
                    }
                }
                break;
            }
            case OpKind::MseLoss: {
                const auto& a = in_val(n, 0);
                const auto& b = in_val(n, 1);
                auto& da = in_grad(n, 0);
                auto& db = in_grad(n, 1);
                T g = n.grad.data[0] * T(2) / static_cast<T>(a.size());
                for (std::size_t i = 0; i < a.size(); ++i) {
                    T d = g * (a.data[i] - b.data[i]);
                    da.data[i] += d;
                    db.data[i] -= d;
                }
                break;
            }
            case OpKind::MeanAxis: {
                const auto& x = in_val(n, 0);
                auto& dx = in_grad(n, 0);
                std::size_t outer = 1;
                for (std::size_t a = 0; a < n.axis; ++a) outer *= x.shape[a];
                std::size_t ext = x.shape[n.axis];
                std::size_t inner = x.size() / (outer * ext);
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t e = 0; e < ext; ++e)
                        for (std::size_t i = 0; i < inner; ++i)
                            dx.data[(o * ext + e) * inner + i] +=
                                n.grad.data[o * inner + i] / static_cast<T>(ext);
                break;
            }
            case OpKind::Input:
            case OpKind::Param:
                break;
        }
    }

    std::size_t class_index(const Node& n, T raw, std::size_t C) const {
        double v = static_cast<double>(raw);
        if (v != std::floor(v) || v < 0.0 || v >= static_cast<double>(C))
            throw ShapeError("node '" + n.name + "': target " + std::to_string(v) +
                             " is not a class index in [0," + std::to_string(C) + ")");
        return static_cast<std::size_t>(v);
    }

    std::vector<T> scratch_, scratch2_;
};

}  // namespace probegen
