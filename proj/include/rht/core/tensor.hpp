#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rht/core/error.hpp"

namespace rht {

/// Flat trainable tensor with an explicit shape (kernels, biases, dense matrices).
template <class T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, T fill = T{0})
        : shape(std::move(s)),
          data(std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{}), fill)
    {
    }

    std::size_t size() const noexcept { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::span<T> values() noexcept { return data; }
    std::span<const T> values() const noexcept { return data; }

    /// Same shape, all zeros.
    Tensor zeros_like() const { return Tensor(shape); }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <class T>
std::string shape_string(const Tensor<T>& t)
{
    std::string s;
    for (std::size_t i = 0; i < t.shape.size(); ++i)
        s += (i ? "x" : "") + std::to_string(t.shape[i]);
    return s;
}

} // namespace rht
