#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "probegen/models.hpp"
#include "test_support.hpp"

using namespace probegen;
using test::random_array;

namespace {

ProbedModel make_model(const ArchitectureSpec& spec, std::uint64_t seed, const std::string& id) {
    Rng rng(seed);
    ProbedModel m{spec, init_weights(spec, rng), id};
    m.validate();
    return m;
}

std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    rng.shuffle(p);
    return p;
}

}  // namespace

TEST_CASE("INR with all-zero weights outputs the final bias") {
    auto spec = ArchitectureSpec::inr();
    ProbedModel m{spec, {}, "zero"};
    for (const auto& l : spec.layers) {
        m.weights.weights.emplace_back(layer_weight_shape(l));
        m.weights.biases.emplace_back(layer_bias_shape(l));
    }
    m.weights.biases.back().data[0] = 0.75f;
    auto out = model_forward(m, DenseArray<float>::from({2, 2}, {0.3f, -0.8f, 0.f, 0.f}));
    REQUIRE(out.shape == Shape{2, 1});
    REQUIRE(out.data[0] == 0.75f);
    REQUIRE(out.data[1] == 0.75f);
}

TEST_CASE("1-layer affine INR computes the plain affine map") {
    ArchitectureSpec spec;
    spec.input_shape = {2};
    spec.output_shape = {1};
    spec.layers.push_back(LayerSpec::affine(2, 1, Activation::None));
    ProbedModel m{spec, {}, "affine_inr"};
    m.weights.weights.push_back(DenseArray<float>::from({1, 2}, {1.f, 0.f}));
    m.weights.biases.push_back(DenseArray<float>::from({1}, {0.f}));
    auto out = model_forward(m, DenseArray<float>::from({1, 2}, {0.5f, -0.3f}));
    REQUIRE(out.data[0] == 0.5f);
}

TEST_CASE("2-layer sine INR matches a hand-evaluated composition at the origin") {
    ArchitectureSpec spec;
    spec.input_shape = {2};
    spec.output_shape = {1};
    spec.layers.push_back(LayerSpec::affine(2, 2, Activation::Sine, 30.f));
    spec.layers.push_back(LayerSpec::affine(2, 1, Activation::None));
    ProbedModel m{spec, {}, "hand"};
    m.weights.weights.push_back(DenseArray<float>::from({2, 2}, {0.1f, 0.2f, -0.3f, 0.4f}));
    m.weights.biases.push_back(DenseArray<float>::from({2}, {0.05f, -0.02f}));
    m.weights.weights.push_back(DenseArray<float>::from({1, 2}, {1.5f, -2.0f}));
    m.weights.biases.push_back(DenseArray<float>::from({1}, {0.25f}));
    // at (0,0): h = sin(30 * b1), out = w2 . h + b2
    double h0 = std::sin(30.0 * 0.05), h1 = std::sin(30.0 * -0.02);
    double want = 1.5 * h0 - 2.0 * h1 + 0.25;
    auto out = model_forward(m, DenseArray<float>({1, 2}));
    REQUIRE(out.data[0] == Catch::Approx(want).margin(1e-5));
}

TEST_CASE("count_parameters") {
    SECTION("two-affine INR: 2*32+32 + 32*1+1 = 129") {
        ArchitectureSpec spec;
        spec.input_shape = {2};
        spec.output_shape = {1};
        spec.layers.push_back(LayerSpec::affine(2, 32, Activation::Sine, 30.f));
        spec.layers.push_back(LayerSpec::affine(32, 1, Activation::None));
        auto m = make_model(spec, 1, "m");
        REQUIRE(count_parameters(m) == 129);
    }
    SECTION("empty spec counts zero") {
        ProbedModel m;
        REQUIRE(count_parameters(m) == 0);
    }
    SECTION("single conv(1->4,k=3): 1*4*3*3 + 4 = 40") {
        ArchitectureSpec spec;
        spec.input_shape = {1, 4, 4};
        spec.output_shape = {4, 4, 4};
        spec.layers.push_back(LayerSpec::conv(1, 4, 3, 1, 1, Activation::None));
        auto m = make_model(spec, 2, "m");
        REQUIRE(count_parameters(m) == 40);
    }
}

TEST_CASE("permute_hidden_neurons") {
    auto spec = ArchitectureSpec::inr(3, 16);
    auto m = make_model(spec, 33, "perm");
    Rng rng(44);

    SECTION("identity permutation leaves weights bitwise identical") {
        std::vector<std::size_t> id(16);
        std::iota(id.begin(), id.end(), 0);
        auto p = permute_hidden_neurons(m, 1, id);
        for (std::size_t i = 0; i < m.weights.weights.size(); ++i) {
            REQUIRE(p.weights.weights[i] == m.weights.weights[i]);
            REQUIRE(p.weights.biases[i] == m.weights.biases[i]);
        }
    }

    SECTION("any permutation preserves the function") {
        // checked at 64-bit so that summation-reorder noise stays far below
        // the 1e-5 bound
        for (std::size_t layer : {std::size_t(0), std::size_t(1), std::size_t(2)}) {
            auto perm = random_permutation(16, rng);
            auto p = permute_hidden_neurons(m, layer, perm);
            auto x = random_array<double>({100, 2}, rng);
            auto a = model_forward_t<double>(m, x);
            auto b = model_forward_t<double>(p, x);
            REQUIRE(max_rel_diff(a, b, 1e-5) < 1e-5);
        }
    }

    SECTION("composing a permutation with its inverse recovers weights bitwise") {
        auto perm = random_permutation(16, rng);
        std::vector<std::size_t> inv(16);
        for (std::size_t i = 0; i < 16; ++i) inv[perm[i]] = i;
        auto p = permute_hidden_neurons(permute_hidden_neurons(m, 1, perm), 1, inv);
        for (std::size_t i = 0; i < m.weights.weights.size(); ++i) {
            REQUIRE(p.weights.weights[i] == m.weights.weights[i]);
            REQUIRE(p.weights.biases[i] == m.weights.biases[i]);
        }
    }

    SECTION("CNN channel permutation preserves the function across gap") {
        auto cspec = ArchitectureSpec::cnn({8, 8, 8}, 1, 8);
        auto cm = make_model(cspec, 55, "cnn");
        auto x = random_array<double>({4, 1, 8, 8}, rng, 0.0, 1.0);
        for (std::size_t layer : {std::size_t(0), std::size_t(1), std::size_t(2)}) {
            auto perm = random_permutation(8, rng);
            auto p = permute_hidden_neurons(cm, layer, perm);
            REQUIRE(max_rel_diff(model_forward_t<double>(cm, x), model_forward_t<double>(p, x),
                                 1e-5) < 1e-5);
        }
    }

    SECTION("length mismatch errors") {
        std::vector<std::size_t> bad(7);
        std::iota(bad.begin(), bad.end(), 0);
        REQUIRE_THROWS_AS(permute_hidden_neurons(m, 1, bad), ShapeError);
    }

    SECTION("output layer cannot be permuted") {
        std::vector<std::size_t> id(1, 0);
        REQUIRE_THROWS_AS(permute_hidden_neurons(m, 3, id), ShapeError);
    }
}

TEST_CASE("model input shape mismatch names the model") {
    auto m = make_model(ArchitectureSpec::inr(2, 8), 9, "shapely");
    try {
        model_forward(m, DenseArray<float>({4, 3}));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        REQUIRE(std::string(e.what()).find("shapely") != std::string::npos);
    }
}

TEST_CASE("architecture validation") {
    SECTION("output layer must be linear") {
        ArchitectureSpec spec;
        spec.input_shape = {2};
        spec.output_shape = {1};
        spec.layers.push_back(LayerSpec::affine(2, 1, Activation::Relu));
        REQUIRE_THROWS_AS(spec.validate(), ShapeError);
    }
    SECTION("layers must compose") {
        ArchitectureSpec spec;
        spec.input_shape = {2};
        spec.output_shape = {1};
        spec.layers.push_back(LayerSpec::affine(3, 1, Activation::None));
        REQUIRE_THROWS_AS(spec.validate(), ShapeError);
    }
}
