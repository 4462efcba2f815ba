#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xpcb {

// Dense row-major tensor. Two-dimensional views treat every leading axis as
// rows and the last axis as columns.
template <class T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims, T fill = T{})
        : shape(std::move(dims)), data(element_count(shape), fill) {}

    static std::size_t element_count(const std::vector<std::size_t>& dims) {
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
    }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }
    std::size_t rows() const { return cols() == 0 ? 0 : data.size() / cols(); }

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    std::span<T> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
    std::span<const T> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

    std::span<T> span() { return data; }
    std::span<const T> span() const { return data; }

    void fill(T value) { std::fill(data.begin(), data.end(), value); }
    void zero() { fill(T{}); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

template <class T>
Tensor<T> matrix(std::size_t rows, std::size_t cols, T fill = T{}) {
    return Tensor<T>({rows, cols}, fill);
}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <class T>
bool all_finite(std::span<const T> values) {
    for (T v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

// Generic operations over parameter sets. A parameter set is any type with
//   template <class F> void visit(F&& f)        -> f(const std::string&, Tensor<T>&)
//   template <class F> void visit(F&& f) const  -> f(const std::string&, const Tensor<T>&)
// visiting tensors in a fixed order.

template <class Params>
Params zeros_like(const Params& p) {
    Params z = p;
    z.visit([](const std::string&, auto& t) { t.zero(); });
    return z;
}

template <class Params>
std::size_t parameter_count(const Params& p) {
    std::size_t n = 0;
    p.visit([&](const std::string&, const auto& t) { n += t.size(); });
    return n;
}

template <class Params>
bool params_equal(const Params& a, const Params& b) {
    bool equal = true;
    std::vector<std::pair<std::string, std::vector<double>>> left;
    a.visit([&](const std::string& name, const auto& t) {
        left.emplace_back(name, std::vector<double>(t.data.begin(), t.data.end()));
    });
    std::size_t i = 0;
    b.visit([&](const std::string& name, const auto& t) {
        if (i >= left.size() || left[i].first != name || left[i].second.size() != t.size()) {
            equal = false;
        } else {
            for (std::size_t k = 0; k < t.size(); ++k)
                if (left[i].second[k] != static_cast<double>(t.data[k])) equal = false;
        }
        ++i;
    });
    return equal && i == left.size();
}

}  // namespace xpcb
