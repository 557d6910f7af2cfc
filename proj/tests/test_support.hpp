#pragma once

#include "probegen/array.hpp"
#include "probegen/rng.hpp"

namespace probegen::test {

template <typename T>
DenseArray<T> random_array(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    DenseArray<T> a(std::move(shape));
    rng.fill_uniform(a, lo, hi);
    return a;
}

}  // namespace probegen::test
