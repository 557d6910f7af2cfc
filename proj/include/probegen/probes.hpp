#pragma once

#include "probegen/graph.hpp"
#include "probegen/models.hpp"

namespace probegen {

enum class GeneratorKind { Identity, FcLinear, FcNonlinear, ConvLinear, ConvNonlinear };

inline const char* generator_kind_name(GeneratorKind k) {
    switch (k) {
        case GeneratorKind::Identity: return "identity";
        case GeneratorKind::FcLinear: return "fc-linear";
        case GeneratorKind::FcNonlinear: return "fc-nonlinear";
        case GeneratorKind::ConvLinear: return "conv-linear";
        case GeneratorKind::ConvNonlinear: return "conv-nonlinear";
    }
    return "?";
}

inline GeneratorKind generator_kind_from(const std::string& s) {
    if (s == "identity") return GeneratorKind::Identity;
    if (s == "fc-linear") return GeneratorKind::FcLinear;
    if (s == "fc-nonlinear") return GeneratorKind::FcNonlinear;
    if (s == "conv-linear") return GeneratorKind::ConvLinear;
    if (s == "conv-nonlinear") return GeneratorKind::ConvNonlinear;
    throw ConfigError("unknown generator kind '" + s + "'");
}

inline bool is_linear_kind(GeneratorKind k) {
    return k == GeneratorKind::Identity || k == GeneratorKind::FcLinear ||
           k == GeneratorKind::ConvLinear;
}

inline bool is_conv_kind(GeneratorKind k) {
    return k == GeneratorKind::ConvLinear || k == GeneratorKind::ConvNonlinear;
}

// Per-probe latent rows; identity generators use the rows directly as probes.
struct LatentCodes {
    DenseArray<float> z;  // (k, d)
    bool trainable = true;
};

struct GeneratorConfig {
    GeneratorKind kind = GeneratorKind::FcLinear;
    std::size_t depth = 2;
    std::size_t width_multiplier = 16;
    std::size_t fc_hidden = 32;  // hidden size of FC coordinate generators
    Shape output_shape = {2};    // (d) for coordinates, (C,H,W) for images
    std::size_t latent_dim = 32;

    bool is_image() const { return output_shape.size() == 3; }

    void validate() const {
        if (output_shape.empty() || (output_shape.size() != 1 && output_shape.size() != 3))
            throw ConfigError("generator output shape must be (d) or (C,H,W), got " +
                              shape_str(output_shape));
        if (kind == GeneratorKind::Identity) {
            if (latent_dim != shape_numel(output_shape))
                throw ConfigError("identity generator requires latent dim " +
                                  std::to_string(shape_numel(output_shape)) + ", got " +
                                  std::to_string(latent_dim));
            return;
        }
        if (depth < 1) throw ConfigError("generator depth must be >= 1");
        if (is_conv_kind(kind)) {
            if (!is_image()) throw ConfigError("conv generators produce images, output shape is " +
                                               shape_str(output_shape));
            std::size_t h = output_shape[1], w = output_shape[2];
            if (h != w || h < 2 || (h & (h - 1)) != 0)
                throw ConfigError("conv generator target must be square power-of-two >= 2, got " +
                                  shape_str(output_shape));
        }
    }
};

// One transposed-conv stage of the image generator plan.
struct ConvStage {
    std::size_t in_ch, out_ch, kernel, stride, pad;
};

struct ConvPlan {
    std::size_t seed_channels, seed_hw;
    std::vector<ConvStage> stages;
};

// Stage plan for image generators: a latent is affinely projected to a seed
// map, then each transposed-conv stage doubles the spatial extent and halves
// the channel count, the last stage emitting the image channels. The final
// stage has width_multiplier input channels. When depth exceeds log2(target)
// the extra earliest stages are spatial-preserving (kernel 3, stride 1,
// pad 1); when it is smaller the seed map starts at target/2^depth.
inline ConvPlan plan_conv_stages(const GeneratorConfig& cfg) {
    cfg.validate();
    std::size_t target = cfg.output_shape[1];
    std::size_t log2t = 0;
    while ((std::size_t(1) << log2t) < target) ++log2t;
    std::size_t doubling = std::min(cfg.depth, log2t);
    std::size_t preserving = cfg.depth - doubling;
    ConvPlan plan;
    plan.seed_hw = target >> doubling;
    plan.seed_channels = cfg.width_multiplier << (cfg.depth - 1);
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        ConvStage st;
        st.in_ch = cfg.width_multiplier << (cfg.depth - 1 - i);
        st.out_ch = (i + 1 == cfg.depth) ? cfg.output_shape[0]
                                         : cfg.width_multiplier << (cfg.depth - 2 - i);
        if (i < preserving) {
            st.kernel = 3;
            st.stride = 1;
            st.pad = 1;
        } else {
            st.kernel = 4;
            st.stride = 2;
            st.pad = 1;
        }
        plan.stages.push_back(st);
    }
    return plan;
}

// FC layer sizes: latent -> hidden x (depth-1) -> output. Coordinate
// generators use fc_hidden; image generators use 3*H*W.
inline std::vector<std::size_t> fc_layer_dims(const GeneratorConfig& cfg) {
    cfg.validate();
    std::size_t hidden = cfg.is_image() ? 3 * cfg.output_shape[1] * cfg.output_shape[2]
                                        : cfg.fc_hidden;
    std::vector<std::size_t> dims{cfg.latent_dim};
    for (std::size_t i = 0; i + 1 < cfg.depth; ++i) dims.push_back(hidden);
    dims.push_back(shape_numel(cfg.output_shape));
    return dims;
}

// Shared generator parameters; conv plans store the seed projection at
// index 0 followed by the transposed-conv stages.
struct GeneratorParams {
    std::vector<DenseArray<float>> weights;
    std::vector<DenseArray<float>> biases;
};

inline GeneratorParams init_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    GeneratorParams p;
    Rng rng(seed);
    auto draw = [&](Shape ws, Shape bs, double fan_in) {
        double bound = 1.0 / std::sqrt(fan_in);
        DenseArray<float> w(std::move(ws));
        rng.fill_uniform(w, -bound, bound);
        DenseArray<float> b(std::move(bs));
        rng.fill_uniform(b, -bound, bound);
        p.weights.push_back(std::move(w));
        p.biases.push_back(std::move(b));
    };
    if (cfg.kind == GeneratorKind::Identity) return p;
    if (is_conv_kind(cfg.kind)) {
        ConvPlan plan = plan_conv_stages(cfg);
        std::size_t seed_len = plan.seed_channels * plan.seed_hw * plan.seed_hw;
        draw({seed_len, cfg.latent_dim}, {seed_len}, static_cast<double>(cfg.latent_dim));
        for (const ConvStage& st : plan.stages)
            draw({st.in_ch, st.out_ch, st.kernel, st.kernel}, {st.out_ch},
                 static_cast<double>(st.in_ch * st.kernel * st.kernel));
    } else {
        auto dims = fc_layer_dims(cfg);
        for (std::size_t i = 0; i + 1 < dims.size(); ++i)
            draw({dims[i + 1], dims[i]}, {dims[i + 1]}, static_cast<double>(dims[i]));
    }
    return p;
}

// Appends the generator to a graph. The parameter node ids must line up with
// GeneratorParams order (use add_generator_params). Returns the probes node
// of shape (k, ...output_shape).
template <typename T>
typename Graph<T>::NodeId append_generator(Graph<T>& g, const GeneratorConfig& cfg,
                                           typename Graph<T>::NodeId z,
                                           std::span<const typename Graph<T>::NodeId> w_nodes,
                                           std::span<const typename Graph<T>::NodeId> b_nodes) {
    using NodeId = typename Graph<T>::NodeId;
    cfg.validate();
    const Shape& zs = g.shape_of(z);
    if (zs.size() != 2 || zs[1] != cfg.latent_dim)
        throw ConfigError("generator expects latents (k," + std::to_string(cfg.latent_dim) +
                          "), got " + shape_str(zs));
    std::size_t k = zs[0];
    Shape out_shape = cfg.output_shape;
    out_shape.insert(out_shape.begin(), k);

    if (cfg.kind == GeneratorKind::Identity) return g.reshape(z, out_shape, "probes");

    bool nonlinear = cfg.kind == GeneratorKind::FcNonlinear || cfg.kind == GeneratorKind::ConvNonlinear;
    if (is_conv_kind(cfg.kind)) {
        ConvPlan plan = plan_conv_stages(cfg);
        if (w_nodes.size() != plan.stages.size() + 1)
            throw ConfigError("conv generator expects " + std::to_string(plan.stages.size() + 1) +
                              " parameter tensors");
        NodeId cur = g.affine(z, w_nodes[0], b_nodes[0], "gen:seed");
        cur = g.reshape(cur, {k, plan.seed_channels, plan.seed_hw, plan.seed_hw}, "gen:seed_map");
        for (std::size_t i = 0; i < plan.stages.size(); ++i) {
            const ConvStage& st = plan.stages[i];
            cur = g.conv_transpose2d(cur, w_nodes[i + 1], b_nodes[i + 1], st.stride, st.pad,
                                     "gen:stage" + std::to_string(i));
            if (nonlinear && i + 1 < plan.stages.size())
                cur = g.relu(cur, "gen:stage" + std::to_string(i) + ":relu");
        }
        return g.reshape(cur, out_shape, "probes");
    }

    auto dims = fc_layer_dims(cfg);
    if (w_nodes.size() != dims.size() - 1)
        throw ConfigError("fc generator expects " + std::to_string(dims.size() - 1) +
                          " parameter tensors");
    NodeId cur = z;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        cur = g.affine(cur, w_nodes[i], b_nodes[i], "gen:fc" + std::to_string(i));
        if (nonlinear && i + 2 < dims.size()) cur = g.relu(cur, "gen:fc" + std::to_string(i) + ":relu");
    }
    return g.reshape(cur, out_shape, "probes");
}

template <typename T>
struct GeneratorNodes {
    std::vector<typename Graph<T>::NodeId> weights, biases;
};

template <typename T>
GeneratorNodes<T> add_generator_params(Graph<T>& g, const GeneratorParams& params, bool trainable) {
    GeneratorNodes<T> nodes;
    for (std::size_t i = 0; i < params.weights.size(); ++i) {
        if constexpr (std::is_same_v<T, float>) {
            nodes.weights.push_back(g.parameter(params.weights[i], "gen:w" + std::to_string(i), trainable));
            nodes.biases.push_back(g.parameter(params.biases[i], "gen:b" + std::to_string(i), trainable));
        } else {
            nodes.weights.push_back(g.parameter(params.weights[i].template cast<T>(),
                                                "gen:w" + std::to_string(i), trainable));
            nodes.biases.push_back(g.parameter(params.biases[i].template cast<T>(),
                                               "gen:b" + std::to_string(i), trainable));
        }
    }
    return nodes;
}

enum class ProbeSource { Generated, SyntheticUniform, SyntheticDeadLeaves };

struct ProbeSet {
    DenseArray<float> probes;  // (k, ...output shape)
    ProbeSource source = ProbeSource::Generated;
    GeneratorConfig gen_config;  // meaningful for Generated
};

// Runs the generator over every latent row: p_i = G(z_i).
template <typename T>
DenseArray<T> generate_probes_t(const DenseArray<T>& z, const GeneratorConfig& cfg,
                                const GeneratorParams& params) {
    Graph<T> g;
    auto zn = g.input(z.shape, "z");
    auto nodes = add_generator_params(g, params, false);
    auto probes = append_generator<T>(g, cfg, zn, nodes.weights, nodes.biases);
    g.evaluate({{zn, &z}});
    return g.value(probes);
}

inline ProbeSet generate_probes(const LatentCodes& z, const GeneratorConfig& cfg,
                                const GeneratorParams& params) {
    ProbeSet set;
    set.probes = generate_probes_t<float>(z.z, cfg, params);
    set.source = ProbeSource::Generated;
    set.gen_config = cfg;
    return set;
}

// k i.i.d. coordinate probes, each component uniform on [-1,1].
inline ProbeSet synthetic_uniform_coords(std::size_t k, std::uint64_t seed) {
    if (k < 1) throw ConfigError("synthetic_uniform_coords: k must be >= 1");
    Rng rng(seed);
    ProbeSet set;
    set.probes = DenseArray<float>({k, 2});
    rng.fill_uniform(set.probes, -1.0, 1.0);
    set.source = ProbeSource::SyntheticUniform;
    return set;
}

// Stamps opaque discs (radius ~ r^-3 truncated to [0.03,0.5]*min(H,W),
// uniform center, uniform per-channel color) newest-on-bottom until every
// pixel is covered. Draw order per disc: radius, cy, cx, then colors.
inline DenseArray<float> dead_leaves_image(std::size_t H, std::size_t W, std::size_t channels,
                                           std::uint64_t seed, std::size_t* discs_out = nullptr) {
    if (H < 8 || W < 8) throw ConfigError("dead_leaves_image: H and W must be >= 8");
    Rng rng(seed);
    double m = static_cast<double>(std::min(H, W));
    double rmin = 0.03 * m, rmax = 0.5 * m;
    double a2 = 1.0 / (rmin * rmin), b2 = 1.0 / (rmax * rmax);
    DenseArray<float> img({channels, H, W});
    std::vector<bool> covered(H * W, false);
    std::size_t remaining = H * W;
    std::size_t discs = 0;
    std::vector<float> color(channels);
    while (remaining > 0) {
        double u = rng.uniform();
        double r = 1.0 / std::sqrt(a2 - u * (a2 - b2));
        double cy = rng.uniform(0.0, static_cast<double>(H));
        double cx = rng.uniform(0.0, static_cast<double>(W));
        for (std::size_t c = 0; c < channels; ++c) color[c] = static_cast<float>(rng.uniform());
        ++discs;
        long y0 = std::max(0L, static_cast<long>(std::floor(cy - r)));
        long y1 = std::min(static_cast<long>(H) - 1, static_cast<long>(std::ceil(cy + r)));
        long x0 = std::max(0L, static_cast<long>(std::floor(cx - r)));
        long x1 = std::min(static_cast<long>(W) - 1, static_cast<long>(std::ceil(cx + r)));
        for (long y = y0; y <= y1; ++y) {
            for (long x = x0; x <= x1; ++x) {
                std::size_t idx = static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x);
                if (covered[idx]) continue;
                double dy = (static_cast<double>(y) + 0.5) - cy;
                double dx = (static_cast<double>(x) + 0.5) - cx;
                if (dy * dy + dx * dx > r * r) continue;
                covered[idx] = true;
                --remaining;
                for (std::size_t c = 0; c < channels; ++c)
                    img.data[c * H * W + idx] = color[c];
            }
        }
    }
    if (discs_out) *discs_out = discs;
    return img;
}

inline ProbeSet synthetic_dead_leaves(std::size_t k, const Shape& image_shape, std::uint64_t seed) {
    if (k < 1) throw ConfigError("synthetic_dead_leaves: k must be >= 1");
    if (image_shape.size() != 3) throw ConfigError("synthetic_dead_leaves: image shape must be (C,H,W)");
    ProbeSet set;
    Shape s = image_shape;
    s.insert(s.begin(), k);
    set.probes = DenseArray<float>(s);
    std::size_t per = shape_numel(image_shape);
    for (std::size_t i = 0; i < k; ++i) {
        auto img = dead_leaves_image(image_shape[1], image_shape[2], image_shape[0],
                                     derive_seed(seed, i));
        std::copy(img.data.begin(), img.data.end(), set.probes.data.begin() + i * per);
    }
    set.source = ProbeSource::SyntheticDeadLeaves;
    return set;
}

// Additivity residual of a linear-kind generator:
// max over trials of |G(z1+z2) - G(z1) - G(z2) + G(0)|_inf / (1 + |G(z1)|_inf)
template <typename T>
double linearity_residual_t(const GeneratorConfig& cfg, const GeneratorParams& params, int trials,
                            std::uint64_t seed) {
    if (!is_linear_kind(cfg.kind))
        throw ConfigError(std::string("linearity_residual: generator kind '") +
                          generator_kind_name(cfg.kind) + "' is not linear");
    Rng rng(seed);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        DenseArray<T> z1({1, cfg.latent_dim}), z2({1, cfg.latent_dim}), z12({1, cfg.latent_dim}),
            z0({1, cfg.latent_dim});
        rng.fill_normal(z1, 0.0, 1.0);
        rng.fill_normal(z2, 0.0, 1.0);
        for (std::size_t i = 0; i < z1.size(); ++i) z12.data[i] = z1.data[i] + z2.data[i];
        auto g12 = generate_probes_t<T>(z12, cfg, params);
        auto g1 = generate_probes_t<T>(z1, cfg, params);
        auto g2 = generate_probes_t<T>(z2, cfg, params);
        auto g0 = generate_probes_t<T>(z0, cfg, params);
        double num = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < g1.size(); ++i) {
            double res = static_cast<double>(g12.data[i]) - static_cast<double>(g1.data[i]) -
                         static_cast<double>(g2.data[i]) + static_cast<double>(g0.data[i]);
            num = std::max(num, std::abs(res));
            scale = std::max(scale, std::abs(static_cast<double>(g1.data[i])));
        }
        worst = std::max(worst, num / (1.0 + scale));
    }
    return worst;
}

inline double linearity_residual(const GeneratorConfig& cfg, const GeneratorParams& params,
                                 int trials, std::uint64_t seed) {
    return linearity_residual_t<float>(cfg, params, trials, seed);
}

}  // namespace probegen
