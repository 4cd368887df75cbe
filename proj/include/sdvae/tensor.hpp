#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace sdvae {

struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const noexcept { return rows * cols; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

// Dense row-major matrix of doubles with a gradient slot of equal length.
// Scalars are 1x1, per-example quantities are batch x 1.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);
    Tensor(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

    static Tensor scalar(double v) { return Tensor(1, 1, v); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rows() const noexcept { return shape_.rows; }
    std::size_t cols() const noexcept { return shape_.cols; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_.cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_.cols + c]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> grad() noexcept { return grad_; }
    std::span<const double> grad() const noexcept { return grad_; }
    double grad(std::size_t r, std::size_t c) const { return grad_[r * shape_.cols + c]; }

    void zero_grad();
    // Scalar value of a 1x1 tensor.
    double item() const;
    bool all_finite() const noexcept;

    // Bitwise comparison of shape and values (grads ignored).
    bool same_values(const Tensor& other) const noexcept;

private:
    Shape shape_;
    std::vector<double> values_;
    std::vector<double> grad_;
};

Tensor one_hot(std::span<const std::size_t> classes, std::size_t k);

}  // namespace sdvae
