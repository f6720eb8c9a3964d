#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "cnnf/rng.hpp"
#include "cnnf/tensor.hpp"

namespace cnnf::testing {

template <typename T>
void fill_uniform(TensorT<T>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (std::int64_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<T>(lo + (hi - lo) * rng.next_double());
    }
}

template <typename T>
void fill_normal(TensorT<T>& t, Rng& rng, double mean = 0.0, double stddev = 1.0) {
    for (std::int64_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<T>(rng.next_normal(mean, stddev));
    }
}

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return worst;
}

// Relative error with an absolute floor, evaluated elementwise.
template <typename T>
double max_rel_diff(const TensorT<T>& a, const TensorT<T>& b, double floor = 1e-8) {
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const double x = static_cast<double>(a[i]);
        const double y = static_cast<double>(b[i]);
        const double denom = std::max({std::abs(x), std::abs(y), floor});
        worst = std::max(worst, std::abs(x - y) / denom);
    }
    return worst;
}

// Max elementwise difference scaled by the largest magnitude in the reference.
// This is the usual norm-wise relative error for comparing whole tensors; it
// does not blow up when individual elements cancel to near zero.
template <typename T>
double scaled_max_diff(const TensorT<T>& a, const TensorT<T>& b) {
    double scale = 0.0;
    for (std::int64_t i = 0; i < b.size(); ++i) {
        scale = std::max(scale, std::abs(static_cast<double>(b[i])));
    }
    return max_abs_diff(a, b) / std::max(scale, 1e-30);
}

template <typename T>
bool bitwise_equal(const TensorT<T>& a, const TensorT<T>& b) {
    if (!a.same_shape(b)) return false;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) return false;
    }
    return true;
}

}  // namespace cnnf::testing
