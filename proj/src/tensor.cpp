#include "sdvae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sdvae/errors.hpp"

namespace sdvae {

std::string Shape::str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : shape_{rows, cols}, values_(rows * cols, fill), grad_(rows * cols, 0.0) {
    if (rows == 0 || cols == 0) throw ShapeError("tensor extents must be positive, got " + shape_.str());
}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : shape_{rows, cols}, values_(std::move(values)), grad_(rows * cols, 0.0) {
    if (rows == 0 || cols == 0) throw ShapeError("tensor extents must be positive, got " + shape_.str());
    if (values_.size() != rows * cols)
        throw ShapeError("tensor " + shape_.str() + " given " + std::to_string(values_.size()) + " values");
}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::initializer_list<double> values)
    : Tensor(rows, cols, std::vector<double>(values)) {}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_.str());
    return values_[0];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool Tensor::same_values(const Tensor& other) const noexcept {
    return shape_ == other.shape_ &&
           std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0;
}

Tensor one_hot(std::span<const std::size_t> classes, std::size_t k) {
    Tensor out(classes.size(), k);
    for (std::size_t r = 0; r < classes.size(); ++r) {
        if (classes[r] >= k) throw ValidationError("class index " + std::to_string(classes[r]) + " >= " + std::to_string(k));
        out(r, classes[r]) = 1.0;
    }
    return out;
}

}  // namespace sdvae
