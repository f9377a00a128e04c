#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "lietorch/field.hpp"

namespace testutil {

inline lietorch::M2FeatureMap random_map(const lietorch::M2Grid& g, int channels, std::uint64_t seed,
                                         double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(lo, hi);
    lietorch::M2FeatureMap m(g, channels);
    for (double& v : m.data()) v = U(rng);
    return m;
}

inline lietorch::Image2D random_image(int w, int h, int channels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    lietorch::Image2D img(w, h, channels);
    for (double& v : img.data()) v = U(rng);
    return img;
}

template <class A, class B>
double max_abs_diff(const A& a, const B& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

template <class A, class B>
double dot(const A& a, const B& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace testutil
