#include "fedrm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace fedrm {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ", ";
        out << shape[i];
    }
    out << ')';
    return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " elements");
    }
}

Tensor Tensor::reshaped(Shape shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
    if (shape_size(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    shape_ = std::move(shape);
    return std::move(*this);
}

Shape Tensor::sample_shape() const {
    if (shape_.empty()) throw ShapeError("scalar tensor has no sample shape");
    return Shape(shape_.begin() + 1, shape_.end());
}

std::size_t Tensor::sample_size() const {
    if (shape_.empty()) throw ShapeError("scalar tensor has no sample shape");
    return shape_[0] == 0 ? shape_size(sample_shape()) : data_.size() / shape_[0];
}

Tensor Tensor::slice(std::size_t first, std::size_t count) const {
    if (shape_.empty() || first + count > shape_[0]) {
        throw ShapeError("slice out of range for shape " + shape_str(shape_));
    }
    Shape out_shape = shape_;
    out_shape[0] = count;
    const std::size_t stride = sample_size();
    std::vector<double> values(data_.begin() + static_cast<std::ptrdiff_t>(first * stride),
                               data_.begin() + static_cast<std::ptrdiff_t>((first + count) * stride));
    return Tensor(std::move(out_shape), std::move(values));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::squared_norm() const {
    double acc = 0.0;
    for (double v : data_) acc += v * v;
    return acc;
}

void Tensor::require_finite(std::string_view where) const {
    for (double v : data_) {
        if (!std::isfinite(v)) throw NumericError("non-finite value in " + std::string(where));
    }
}

bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_.size() == b.data_.size() &&
           (a.data_.empty() ||
            std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(double)) == 0);
}

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> indices) {
    Shape shape = src.shape();
    if (shape.empty()) throw ShapeError("gather_rows needs a batched tensor");
    const std::size_t stride = src.sample_size();
    shape[0] = indices.size();
    std::vector<double> values(indices.size() * stride);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= src.dim(0)) throw ShapeError("gather_rows index out of range");
        std::copy_n(src.ptr() + indices[i] * stride, stride, values.data() + i * stride);
    }
    return Tensor(std::move(shape), std::move(values));
}

}  // namespace fedrm
