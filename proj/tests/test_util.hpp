#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "mosformer/tensor.hpp"

namespace mosf::test {

// Central finite differences against reverse-mode gradients, independent of
// the library's gradcheck driver. Returns the max relative deviation over all
// coordinates of all leaves.
template <typename T>
double fd_check(std::vector<Tensor<T>> leaves, const std::function<Tensor<T>()>& forward, T h) {
    for (auto& leaf : leaves) {
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    Tensor<T> out = forward();
    out.backward();
    std::vector<std::vector<T>> analytic;
    for (auto& leaf : leaves) analytic.push_back(leaf.grad());

    double num = 0.0, den = 1e-8;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        for (std::size_t i = 0; i < leaf.size(); ++i) {
            const T saved = leaf.data()[i];
            NoGradGuard ng;
            leaf.data()[i] = saved + h;
            const double fp = static_cast<double>(forward().item());
            leaf.data()[i] = saved - h;
            const double fm = static_cast<double>(forward().item());
            leaf.data()[i] = saved;
            const double numeric = (fp - fm) / (2.0 * static_cast<double>(h));
            const double a = static_cast<double>(analytic[li][i]);
            num = std::max(num, std::abs(a - numeric));
            den = std::max({den, std::abs(a), std::abs(numeric)});
        }
    }
    return num / den;
}

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

template <typename T>
bool bitwise_equal(const std::vector<T>& a, const std::vector<T>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::memcmp(&a[i], &b[i], sizeof(T)) != 0) return false;
    return true;
}

}  // namespace mosf::test
