#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "fewshot/errors.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

using Shape = std::vector<int>;

inline int shape_numel(const Shape& shape) {
    int n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    out += "]";
    return out;
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// Dense row-major tensor of doubles. Everything in the engine is 64-bit:
// the matrices involved are tiny and determinism plus gradient-check
// headroom matter more than speed.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // same length as data when requires_grad

    Tensor() = default;

    explicit Tensor(Shape s) : shape(std::move(s)) {
        for (int dim : shape) {
            if (dim <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
        }
        data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    }

    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != static_cast<int>(data.size())) {
            throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
        }
        for (int dim : shape) {
            if (dim <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
        }
    }

    static Tensor zeros(Shape s) {
        std::vector<double> d(static_cast<size_t>(shape_numel(s)), 0.0);
        return Tensor(std::move(s), std::move(d));
    }

    static Tensor full(Shape s, double value) {
        std::vector<double> d(static_cast<size_t>(shape_numel(s)), value);
        return Tensor(std::move(s), std::move(d));
    }

    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    static Tensor row(std::vector<double> values) {
        int n = static_cast<int>(values.size());
        return Tensor({n}, std::move(values));
    }

    static Tensor matrix(int rows, int cols, std::vector<double> values) {
        return Tensor({rows, cols}, std::move(values));
    }

    static Tensor matrix(const std::vector<std::vector<double>>& rows) {
        const int r = static_cast<int>(rows.size());
        const int c = r == 0 ? 0 : static_cast<int>(rows[0].size());
        std::vector<double> flat;
        flat.reserve(static_cast<size_t>(r) * static_cast<size_t>(c));
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != c) {
                throw ShapeError("matrix rows have unequal lengths");
            }
            flat.insert(flat.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(flat));
    }

    // Glorot-uniform over the trailing two dimensions; rank-1 tensors use
    // fan (1, n). Used for weight matrices; readout vectors are zero-init.
    static Tensor glorot(Shape s, Rng& rng) {
        Tensor t = Tensor::zeros(s);
        int fan_in = 1, fan_out = 1;
        if (s.size() >= 2) {
            fan_in = s[s.size() - 2];
            fan_out = s[s.size() - 1];
        } else if (s.size() == 1) {
            fan_out = s[0];
        }
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& v : t.data) v = rng.uniform(-limit, limit);
        return t;
    }

    int numel() const { return static_cast<int>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    bool is_scalar() const { return data.size() == 1; }

    double at(int i) const { return data[static_cast<size_t>(i)]; }
    double at(int i, int j) const {
        return data[static_cast<size_t>(i) * static_cast<size_t>(shape[1]) + static_cast<size_t>(j)];
    }
    double at(int i, int j, int k) const {
        return data[(static_cast<size_t>(i) * static_cast<size_t>(shape[1]) +
                     static_cast<size_t>(j)) * static_cast<size_t>(shape[2]) +
                    static_cast<size_t>(k)];
    }
    double& at(int i) { return data[static_cast<size_t>(i)]; }
    double& at(int i, int j) {
        return data[static_cast<size_t>(i) * static_cast<size_t>(shape[1]) + static_cast<size_t>(j)];
    }
    double& at(int i, int j, int k) {
        return data[(static_cast<size_t>(i) * static_cast<size_t>(shape[1]) +
                     static_cast<size_t>(j)) * static_cast<size_t>(shape[2]) +
                    static_cast<size_t>(k)];
    }

    // Marks this tensor as a trainable parameter with a zeroed grad buffer.
    Tensor& make_param() {
        requires_grad = true;
        grad.assign(data.size(), 0.0);
        return *this;
    }

    void zero_grad() {
        if (requires_grad) grad.assign(data.size(), 0.0);
    }
};

inline bool all_finite(const std::vector<double>& values) {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

inline bool all_finite(const Tensor& t) { return all_finite(t.data); }

}  // namespace fewshot
