#include <catch2/catch_amalgamated.hpp>

#include "probegen/adam.hpp"

using namespace probegen;

namespace {

// Scalar Adam re-implementation used as the oracle.
struct ScalarAdam {
    double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double m = 0, v = 0;
    int t = 0;
    double update(double p, double g) {
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double mhat = m / (1 - std::pow(b1, t));
        double vhat = v / (1 - std::pow(b2, t));
        return p - lr * mhat / (std::sqrt(vhat) + eps);
    }
};

}  // namespace

TEST_CASE("first Adam step moves a parameter by about -lr * sign(g)") {
    AdamState<double> st(0.1);
    DenseArray<double> p = DenseArray<double>::from({1}, {2.0});
    DenseArray<double> g = DenseArray<double>::from({1}, {1.0});
    DenseArray<double>* ps[] = {&p};
    const DenseArray<double>* gs[] = {&g};
    adam_step<double>(st, ps, gs);
    double delta = p.data[0] - 2.0;
    REQUIRE(std::abs(delta + 0.1 * 1.0) <= 1e-6);
}

TEST_CASE("zero gradients leave parameters unchanged") {
    AdamState<float> st(0.05);
    DenseArray<float> p = DenseArray<float>::from({3}, {1.f, -2.f, 0.5f});
    DenseArray<float> g(Shape{3});
    DenseArray<float>* ps[] = {&p};
    const DenseArray<float>* gs[] = {&g};
    auto before = p.data;
    for (int i = 0; i < 5; ++i) adam_step<float>(st, ps, gs);
    REQUIRE(p.data == before);
}

TEST_CASE("two steps with constant gradient match the scalar oracle to 1e-12") {
    AdamState<double> st(0.01);
    DenseArray<double> p = DenseArray<double>::from({2}, {1.0, -3.0});
    DenseArray<double> g = DenseArray<double>::from({2}, {0.7, -0.2});
    DenseArray<double>* ps[] = {&p};
    const DenseArray<double>* gs[] = {&g};

    ScalarAdam o0{0.01}, o1{0.01};
    double want0 = 1.0, want1 = -3.0;
    for (int s = 0; s < 2; ++s) {
        adam_step<double>(st, ps, gs);
        want0 = o0.update(want0, 0.7);
        want1 = o1.update(want1, -0.2);
    }
    REQUIRE(p.data[0] == Catch::Approx(want0).margin(1e-12));
    REQUIRE(p.data[1] == Catch::Approx(want1).margin(1e-12));
    REQUIRE(st.step_count() == 2);
}

TEST_CASE("adam_step rejects shape mismatches") {
    AdamState<double> st(0.01);
    DenseArray<double> p({2});
    DenseArray<double> g({3});
    DenseArray<double>* ps[] = {&p};
    const DenseArray<double>* gs[] = {&g};
    REQUIRE_THROWS_AS(adam_step<double>(st, ps, gs), ShapeError);
}
