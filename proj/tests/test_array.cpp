#include <catch2/catch_amalgamated.hpp>

#include "probegen/array.hpp"

using namespace probegen;

TEST_CASE("DenseArray shape/data invariant") {
    DenseArray<float> a({2, 3});
    REQUIRE(a.size() == 6);
    REQUIRE(shape_numel(a.shape) == a.data.size());

    REQUIRE_THROWS_AS(DenseArray<float>::from({2, 2}, {1.f, 2.f, 3.f}), ShapeError);
}

TEST_CASE("DenseArray row-major indexing") {
    auto a = DenseArray<float>::from({2, 3}, {0, 1, 2, 3, 4, 5});
    REQUIRE(a(0, 2) == 2.f);
    REQUIRE(a(1, 0) == 3.f);

    auto b = DenseArray<float>::from({1, 2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
    REQUIRE(b(0, 1, 0, 1) == 5.f);
    REQUIRE(b(0, 0, 1, 1) == 3.f);
}

TEST_CASE("DenseArray finite check and cast") {
    auto a = DenseArray<double>::from({2}, {1.0, 2.0});
    REQUIRE(a.all_finite());
    a.data[1] = std::numeric_limits<double>::infinity();
    REQUIRE_FALSE(a.all_finite());

    auto f = DenseArray<double>::from({2}, {0.5, -1.5}).cast<float>();
    REQUIRE(f.data[0] == 0.5f);
    REQUIRE(f.data[1] == -1.5f);
}

TEST_CASE("max_rel_diff uses symmetric denominator with floor") {
    auto a = DenseArray<double>::from({2}, {1.0, 0.0});
    auto b = DenseArray<double>::from({2}, {1.1, 0.0});
    REQUIRE(max_rel_diff(a, b) == Catch::Approx(0.1 / 1.1).margin(1e-12));
    REQUIRE_THROWS_AS(max_rel_diff(a, DenseArray<double>({3})), ShapeError);
}
