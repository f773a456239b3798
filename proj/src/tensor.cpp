#include "fusionnet/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "fusionnet/errors.hpp"

namespace fusionnet {

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "x" : "") << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
        n *= e;
    }
    return n;
}

namespace {

void check_extents(const Shape& shape) {
    for (std::size_t e : shape) {
        if (e == 0) {
            throw_error(ErrorKind::dimension, "tensor extents must be positive, got " + shape_string(shape));
        }
    }
}

}  // namespace

template <class Real>
Tensor<Real>::Tensor(Shape shape, Real fill) : shape_(std::move(shape)) {
    check_extents(shape_);
    data_.assign(shape_size(shape_), fill);
}

template <class Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents(shape_);
    if (shape_size(shape_) != data_.size()) {
        throw_error(ErrorKind::dimension, "shape " + shape_string(shape_) + " needs " +
                                              std::to_string(shape_size(shape_)) + " values, got " +
                                              std::to_string(data_.size()));
    }
}

template <class Real>
Tensor<Real> Tensor<Real>::from(std::initializer_list<Real> values) {
    return Tensor({values.size()}, std::vector<Real>(values));
}

template <class Real>
Tensor<Real> Tensor<Real>::from(std::initializer_list<std::initializer_list<Real>> rows) {
    const std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    std::vector<Real> data;
    data.reserve(rows.size() * cols);
    for (const auto& row : rows) {
        if (row.size() != cols) {
            throw_error(ErrorKind::dimension, "ragged matrix literal");
        }
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
}

template <class Real>
std::size_t Tensor<Real>::offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
        throw_error(ErrorKind::dimension, "index rank " + std::to_string(index.size()) +
                                              " does not match tensor " + shape_string(shape_));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= shape_[axis]) {
            throw_error(ErrorKind::dimension, "index out of range for " + shape_string(shape_));
        }
        flat = flat * shape_[axis] + i;
        ++axis;
    }
    return flat;
}

template <class Real>
Real& Tensor<Real>::at(std::initializer_list<std::size_t> index) {
    return data_[offset(index)];
}

template <class Real>
Real Tensor<Real>::at(std::initializer_list<std::size_t> index) const {
    return data_[offset(index)];
}

template <class Real>
Tensor<Real> Tensor<Real>::reshaped(Shape shape) const& {
    return Tensor(std::move(shape), data_);
}

template <class Real>
Tensor<Real> Tensor<Real>::reshaped(Shape shape) && {
    return Tensor(std::move(shape), std::move(data_));
}

template <class Real>
void Tensor<Real>::fill(Real value) {
    std::fill(data_.begin(), data_.end(), value);
}

template <class Real>
bool Tensor<Real>::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw_error(ErrorKind::dimension,
                    "matmul of " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
    }
    Tensor<Real> c({a.dim(0), b.dim(1)});
    kernels::gemm<Real>(false, false, a.dim(0), b.dim(1), a.dim(1), Real(1), a.data(), b.data(), Real(0),
                        c.data());
    return c;
}

template <class Real>
Tensor<Real> elementwise(ElementwiseOp op, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape()) {
        throw_error(ErrorKind::dimension,
                    "elementwise op on " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
    }
    Tensor<Real> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        switch (op) {
            case ElementwiseOp::add: out[i] = a[i] + b[i]; break;
            case ElementwiseOp::sub: out[i] = a[i] - b[i]; break;
            case ElementwiseOp::mul: out[i] = a[i] * b[i]; break;
        }
    }
    return out;
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor) {
    Tensor<Real> out = a;
    for (Real& v : out.values()) {
        v *= factor;
    }
    return out;
}

template <class Real>
Tensor<Real> finite_diff_grad(const std::function<Real(const Tensor<Real>&)>& f, const Tensor<Real>& x,
                              Real h) {
    if (!(h > Real(0))) {
        throw_error(ErrorKind::config, "finite difference step must be positive");
    }
    Tensor<Real> probe = x;
    Tensor<Real> grad(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const Real original = probe[i];
        probe[i] = original + h;
        const Real up = f(probe);
        probe[i] = original - h;
        const Real down = f(probe);
        probe[i] = original;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw_error(ErrorKind::numeric, "non-finite function value at coordinate " + std::to_string(i));
        }
        grad[i] = (up - down) / (Real(2) * h);
    }
    return grad;
}

template <class Real>
double max_relative_error(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape()) {
        throw_error(ErrorKind::dimension,
                    "comparing " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
    }
    double diff = 0.0;
    double scale_ = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
        scale_ = std::max({scale_, std::abs(static_cast<double>(a[i])), std::abs(static_cast<double>(b[i]))});
    }
    return diff / std::max(scale_, 1e-12);
}

namespace kernels {

template <class Real>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, Real alpha, const Real* a,
          const Real* b, Real beta, Real* c) {
    using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using ConstMap = Eigen::Map<const Matrix>;
    const auto mi = static_cast<Eigen::Index>(m);
    const auto ni = static_cast<Eigen::Index>(n);
    const auto ki = static_cast<Eigen::Index>(k);
    Eigen::Map<Matrix> cm(c, mi, ni);
    if (beta == Real(0)) {
        cm.setZero();
    } else if (beta != Real(1)) {
        cm *= beta;
    }
    // Stored shapes: A is (m x k) or (k x m); B is (k x n) or (n x k).
    const ConstMap am(a, trans_a ? ki : mi, trans_a ? mi : ki);
    const ConstMap bm(b, trans_b ? ni : ki, trans_b ? ki : ni);
    if (!trans_a && !trans_b) {
        cm.noalias() += alpha * am * bm;
    } else if (trans_a && !trans_b) {
        cm.noalias() += alpha * am.transpose() * bm;
    } else if (!trans_a && trans_b) {
        cm.noalias() += alpha * am * bm.transpose();
    } else {
        cm.noalias() += alpha * am.transpose() * bm.transpose();
    }
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, float, const float*, const float*,
                          float, float*);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, double, const double*,
                           const double*, double, double*);

}  // namespace kernels

#define FUSIONNET_INSTANTIATE(Real)                                                                  \
    template class Tensor<Real>;                                                                     \
    template Tensor<Real> matmul(const Tensor<Real>&, const Tensor<Real>&);                          \
    template Tensor<Real> elementwise(ElementwiseOp, const Tensor<Real>&, const Tensor<Real>&);      \
    template Tensor<Real> scale(const Tensor<Real>&, Real);                                          \
    template Tensor<Real> finite_diff_grad(const std::function<Real(const Tensor<Real>&)>&,          \
                                           const Tensor<Real>&, Real);                               \
    template double max_relative_error(const Tensor<Real>&, const Tensor<Real>&);

FUSIONNET_INSTANTIATE(float)
FUSIONNET_INSTANTIATE(double)

#undef FUSIONNET_INSTANTIATE

}  // namespace fusionnet
