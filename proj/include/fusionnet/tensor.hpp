#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fusionnet {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major tensor. Images are [C,H,W], batches [B,C,H,W].
/// Instantiated for float and double.
template <class Real>
class Tensor {
public:
    using value_type = Real;

    Tensor() = default;
    explicit Tensor(Shape shape, Real fill = Real(0));
    Tensor(Shape shape, std::vector<Real> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor from(std::initializer_list<Real> values);
    static Tensor from(std::initializer_list<std::initializer_list<Real>> rows);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<Real> values() noexcept { return data_; }
    std::span<const Real> values() const noexcept { return data_; }
    Real* data() noexcept { return data_.data(); }
    const Real* data() const noexcept { return data_.data(); }

    Real& operator[](std::size_t i) noexcept { return data_[i]; }
    Real operator[](std::size_t i) const noexcept { return data_[i]; }

    Real& at(std::initializer_list<std::size_t> index);
    Real at(std::initializer_list<std::size_t> index) const;

    /// Same data, new shape of equal element count.
    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    void fill(Real value);
    bool all_finite() const;

    template <class Other>
    Tensor<Other> cast() const {
        std::vector<Other> out(data_.begin(), data_.end());
        return Tensor<Other>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    std::size_t offset(std::initializer_list<std::size_t> index) const;

    Shape shape_;
    std::vector<Real> data_;
};

/// Trainable tensor with its gradient accumulator.
template <class Real>
struct Parameter {
    std::string name;
    Tensor<Real> value;
    Tensor<Real> grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string name_, Tensor<Real> value_)
        : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

    void zero_grad() { grad.fill(Real(0)); }
};

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);

enum class ElementwiseOp { add, sub, mul };

template <class Real>
Tensor<Real> elementwise(ElementwiseOp op, const Tensor<Real>& a, const Tensor<Real>& b);

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    return elementwise(ElementwiseOp::add, a, b);
}
template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    return elementwise(ElementwiseOp::sub, a, b);
}
template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    return elementwise(ElementwiseOp::mul, a, b);
}
template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor);

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h for every coordinate.
/// Throws a numeric error if f is non-finite anywhere it is evaluated.
template <class Real>
Tensor<Real> finite_diff_grad(const std::function<Real(const Tensor<Real>&)>& f,
                              const Tensor<Real>& x, Real h);

/// max|a-b| / max(max|a|, max|b|), with a tiny floor on the denominator.
template <class Real>
double max_relative_error(const Tensor<Real>& a, const Tensor<Real>& b);

namespace kernels {

/// C = alpha * op(A) * op(B) + beta * C for row-major buffers.
/// op(A) is M x K, op(B) is K x N.
template <class Real>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, Real alpha,
          const Real* a, const Real* b, Real beta, Real* c);

}  // namespace kernels

}  // namespace fusionnet
