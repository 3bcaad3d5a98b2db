#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "lss/errors.hpp"

namespace lss {

// Dense row-major tensor of doubles. Treated as immutable once handed to
// another component; copies are cheap at desk scale.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    Tensor(std::vector<std::size_t> shp, std::vector<double> values)
        : shape(std::move(shp)), data(std::move(values)) {
        if (numel_of(shape) != data.size()) {
            throw invalid_argument_error("tensor: shape/data size mismatch");
        }
    }

    static std::size_t numel_of(const std::vector<std::size_t>& shp) {
        std::size_t n = 1;
        for (std::size_t d : shp) n *= d;
        return shp.empty() ? 0 : n;
    }

    static Tensor zeros(std::vector<std::size_t> shp) {
        std::size_t n = numel_of(shp);
        return Tensor(std::move(shp), std::vector<double>(n, 0.0));
    }

    static Tensor full(std::vector<std::size_t> shp, double v) {
        std::size_t n = numel_of(shp);
        return Tensor(std::move(shp), std::vector<double>(n, v));
    }

    // 1 x n row vector, the canonical layout for score distributions.
    static Tensor row(std::vector<double> values) {
        std::size_t n = values.size();
        return Tensor({1, n}, std::move(values));
    }

    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> values) {
        return Tensor({r, c}, std::move(values));
    }

    std::size_t numel() const { return data.size(); }
    bool is_matrix() const { return shape.size() == 2; }
    std::size_t rows() const { return shape.size() == 2 ? shape[0] : 0; }
    std::size_t cols() const { return shape.size() == 2 ? shape[1] : 0; }

    double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw invalid_argument_error(std::string(op) + ": shape mismatch " + a.shape_str() +
                                     " vs " + b.shape_str());
    }
}

}  // namespace lss
