#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace safebev {

/// Dense row-major tensor of doubles. Image-like data uses (channels, rows, cols).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)), values_(count(shape_), fill) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        if (values_.size() != count(shape_)) {
            throw std::invalid_argument("Tensor: value count does not match shape");
        }
    }

    [[nodiscard]] const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] bool empty() const noexcept { return values_.empty(); }

    [[nodiscard]] std::span<double> values() noexcept { return values_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
    [[nodiscard]] double* data() noexcept { return values_.data(); }
    [[nodiscard]] const double* data() const noexcept { return values_.data(); }

    double& operator[](std::size_t k) { return values_[k]; }
    double operator[](std::size_t k) const { return values_[k]; }

    /// Element of a rank-3 (channels, rows, cols) tensor.
    double& at(std::size_t c, std::size_t r, std::size_t q) {
        return values_[(c * shape_[1] + r) * shape_[2] + q];
    }
    double at(std::size_t c, std::size_t r, std::size_t q) const {
        return values_[(c * shape_[1] + r) * shape_[2] + q];
    }

    /// Same values under a new shape with identical element count.
    [[nodiscard]] Tensor reshaped(std::vector<std::size_t> shape) const {
        return Tensor(std::move(shape), values_);
    }

    void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

    friend bool operator==(const Tensor&, const Tensor&) = default;

    static std::size_t count(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               [](std::size_t a, std::size_t b) { return a * b; });
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> values_;
};

/// Elementwise [lower, upper] enclosure of a tensor.
struct IntervalTensor {
    Tensor lower;
    Tensor upper;

    IntervalTensor() = default;
    IntervalTensor(Tensor lo, Tensor hi) : lower(std::move(lo)), upper(std::move(hi)) {
        if (lower.shape() != upper.shape()) {
            throw std::invalid_argument("IntervalTensor: bound shapes differ");
        }
        for (std::size_t k = 0; k < lower.size(); ++k) {
            if (!(lower[k] <= upper[k])) {
                throw std::invalid_argument("IntervalTensor: lower bound exceeds upper bound");
            }
        }
    }

    /// Degenerate interval [t, t].
    static IntervalTensor point(const Tensor& t) { return IntervalTensor(t, t); }

    /// [t - radius, t + radius] elementwise.
    static IntervalTensor widened(const Tensor& t, double radius) {
        Tensor lo = t;
        Tensor hi = t;
        for (std::size_t k = 0; k < t.size(); ++k) {
            lo[k] -= radius;
            hi[k] += radius;
        }
        return IntervalTensor(std::move(lo), std::move(hi));
    }

    [[nodiscard]] const std::vector<std::size_t>& shape() const noexcept { return lower.shape(); }

    [[nodiscard]] double max_width() const {
        double w = 0.0;
        for (std::size_t k = 0; k < lower.size(); ++k) {
            w = std::max(w, upper[k] - lower[k]);
        }
        return w;
    }
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "(";
    for (std::size_t k = 0; k < shape.size(); ++k) {
        if (k) s += ",";
        s += std::to_string(shape[k]);
    }
    return s + ")";
}

}  // namespace safebev
