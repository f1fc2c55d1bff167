#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fedrm {

/// 64-byte aligned storage. Eigen's vectorized kernels pick their code path
/// from the pointer alignment, so a fixed alignment keeps results bitwise
/// reproducible across allocations and threads.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// A NaN or Inf showed up where only finite values are allowed.
class NumericError : public Error {
public:
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. Batched tensors carry the batch as
/// their leading dimension.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double* ptr() noexcept { return data_.data(); }
    const double* ptr() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Same data under a new shape with equal element count.
    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    /// Per-sample shape (everything but the leading dimension).
    Shape sample_shape() const;
    std::size_t sample_size() const;

    /// Copy of samples [first, first + count) along the leading dimension.
    Tensor slice(std::size_t first, std::size_t count) const;

    void fill(double value);
    double sum() const;
    double squared_norm() const;

    /// Throws NumericError naming `where` if any element is NaN or Inf.
    void require_finite(std::string_view where) const;

    /// Bitwise equality of shape and data.
    friend bool operator==(const Tensor& a, const Tensor& b);

private:
    Shape shape_;
    std::vector<double, AlignedAllocator<double>> data_;
};

/// Tensor whose leading dimension is `indices.size()`, gathering rows of `src`.
Tensor gather_rows(const Tensor& src, std::span<const std::size_t> indices);

}  // namespace fedrm
