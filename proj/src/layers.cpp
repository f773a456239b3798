#include "fusionnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "fusionnet/errors.hpp"

namespace fusionnet {

namespace {

struct Spatial {
    std::size_t batch, channels, height, width;
    bool batched;
};

Spatial spatial_of(const Shape& shape, const char* op) {
    if (shape.size() == 4) {
        return {shape[0], shape[1], shape[2], shape[3], true};
    }
    if (shape.size() == 3) {
        return {1, shape[0], shape[1], shape[2], false};
    }
    throw_error(ErrorKind::dimension, std::string(op) + " expects [C,H,W] or [B,C,H,W], got " + shape_string(shape));
}

Shape spatial_shape(const Spatial& s, std::size_t channels, std::size_t height, std::size_t width) {
    if (s.batched) {
        return {s.batch, channels, height, width};
    }
    return {channels, height, width};
}

// Rows of [B,D] or a single [D] vector.
struct Rows {
    std::size_t count, width;
    bool batched;
};

Rows rows_of(const Shape& shape, const char* op) {
    if (shape.size() == 2) {
        return {shape[0], shape[1], true};
    }
    if (shape.size() == 1) {
        return {1, shape[0], false};
    }
    throw_error(ErrorKind::dimension, std::string(op) + " expects [D] or [B,D], got " + shape_string(shape));
}

// Output columns [lo, hi) whose input column ox * stride + kj - pad lies inside [0, width).
std::pair<std::size_t, std::size_t> valid_columns(std::size_t out_w, std::size_t width, std::size_t stride,
                                                  std::size_t kj, std::size_t pad) {
    std::size_t lo = 0;
    if (kj < pad) {
        lo = std::min(out_w, (pad - kj + stride - 1) / stride);
    }
    std::size_t hi = 0;
    if (width + pad > kj) {
        hi = std::min(out_w, (width + pad - kj - 1) / stride + 1);
    }
    return {lo, std::max(lo, hi)};
}

template <class Real>
void im2col(const Real* image, std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, Real* col) {
    const std::size_t plane = out_h * out_w;
    for (std::size_t c = 0; c < channels; ++c) {
        const Real* src = image + c * height * width;
        for (std::size_t ki = 0; ki < kernel; ++ki) {
            for (std::size_t kj = 0; kj < kernel; ++kj) {
                Real* dst = col + ((c * kernel + ki) * kernel + kj) * plane;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - static_cast<std::ptrdiff_t>(pad);
                    Real* row = dst + oy * out_w;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
                        std::fill(row, row + out_w, Real(0));
                        continue;
                    }
                    const Real* src_row = src + static_cast<std::size_t>(iy) * width;
                    const auto [lo, hi] = valid_columns(out_w, width, stride, kj, pad);
                    std::fill(row, row + lo, Real(0));
                    if (stride == 1) {
                        std::copy(src_row + lo + kj - pad, src_row + hi + kj - pad, row + lo);
                    } else {
                        for (std::size_t ox = lo; ox < hi; ++ox) {
                            row[ox] = src_row[ox * stride + kj - pad];
                        }
                    }
                    std::fill(row + hi, row + out_w, Real(0));
                }
            }
        }
    }
}

template <class Real>
void col2im(const Real* col, std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, Real* image) {
    const std::size_t plane = out_h * out_w;
    std::fill(image, image + channels * height * width, Real(0));
    for (std::size_t c = 0; c < channels; ++c) {
        Real* dst = image + c * height * width;
        for (std::size_t ki = 0; ki < kernel; ++ki) {
            for (std::size_t kj = 0; kj < kernel; ++kj) {
                const Real* src = col + ((c * kernel + ki) * kernel + kj) * plane;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
                        continue;
                    }
                    Real* dst_row = dst + static_cast<std::size_t>(iy) * width;
                    const Real* row = src + oy * out_w;
                    const auto [lo, hi] = valid_columns(out_w, width, stride, kj, pad);
                    for (std::size_t ox = lo; ox < hi; ++ox) {
                        dst_row[ox * stride + kj - pad] += row[ox];
                    }
                }
            }
        }
    }
}

void check_stride(std::size_t stride) {
    if (stride == 0) {
        throw_error(ErrorKind::config, "stride must be >= 1");
    }
}

// 'same' padding needs a centre tap; 'valid' accepts any positive size.
void check_kernel(std::size_t kernel, Padding padding) {
    if (kernel == 0 || (padding == Padding::same && kernel % 2 == 0)) {
        throw_error(ErrorKind::config, "kernel size must be odd for same padding, got " + std::to_string(kernel));
    }
}

}  // namespace

std::size_t padding_amount(std::size_t kernel, Padding padding) {
    return padding == Padding::same ? kernel / 2 : 0;
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
    check_stride(stride);
    const std::size_t padded = in + 2 * padding_amount(kernel, padding);
    if (kernel > padded) {
        throw_error(ErrorKind::dimension, "kernel " + std::to_string(kernel) + " larger than padded input " +
                                              std::to_string(padded));
    }
    return (padded - kernel) / stride + 1;
}

// ---------------------------------------------------------------------------
// conv2d

template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& weights, const Tensor<Real>& bias,
                    std::size_t stride, Padding padding) {
    const Spatial s = spatial_of(input.shape(), "conv2d");
    if (weights.rank() != 4 || weights.dim(2) != weights.dim(3) || weights.dim(1) != s.channels) {
        throw_error(ErrorKind::dimension, "conv2d weights " + shape_string(weights.shape()) + " do not fit input " +
                                              shape_string(input.shape()));
    }
    const std::size_t out_c = weights.dim(0);
    const std::size_t kernel = weights.dim(2);
    check_kernel(kernel, padding);
    if (bias.rank() != 1 || bias.dim(0) != out_c) {
        throw_error(ErrorKind::dimension, "conv2d bias " + shape_string(bias.shape()) + " for " +
                                              std::to_string(out_c) + " output channels");
    }
    const std::size_t pad = padding_amount(kernel, padding);
    const std::size_t out_h = conv_output_extent(s.height, kernel, stride, padding);
    const std::size_t out_w = conv_output_extent(s.width, kernel, stride, padding);
    const std::size_t plane = out_h * out_w;
    const std::size_t patch = s.channels * kernel * kernel;
    const bool direct = kernel == 1 && stride == 1;

    Tensor<Real> out(spatial_shape(s, out_c, out_h, out_w));
    std::vector<Real> col(direct ? 0 : patch * plane);
    const std::size_t in_stride = s.channels * s.height * s.width;
    for (std::size_t n = 0; n < s.batch; ++n) {
        const Real* image = input.data() + n * in_stride;
        const Real* cols = image;
        if (!direct) {
            im2col(image, s.channels, s.height, s.width, kernel, stride, pad, out_h, out_w, col.data());
            cols = col.data();
        }
        Real* dst = out.data() + n * out_c * plane;
        for (std::size_t o = 0; o < out_c; ++o) {
            std::fill(dst + o * plane, dst + (o + 1) * plane, bias[o]);
        }
        kernels::gemm<Real>(false, false, out_c, plane, patch, Real(1), weights.data(), cols, Real(1), dst);
    }
    return out;
}

template <class Real>
void conv2d_backward(const Tensor<Real>& input, const Tensor<Real>& weights, std::size_t stride, Padding padding,
                     const Tensor<Real>& grad_output, Tensor<Real>* grad_input, Tensor<Real>& grad_weights,
                     Tensor<Real>& grad_bias) {
    const Spatial s = spatial_of(input.shape(), "conv2d_backward");
    const std::size_t out_c = weights.dim(0);
    const std::size_t kernel = weights.dim(2);
    const std::size_t pad = padding_amount(kernel, padding);
    const std::size_t out_h = conv_output_extent(s.height, kernel, stride, padding);
    const std::size_t out_w = conv_output_extent(s.width, kernel, stride, padding);
    if (grad_output.shape() != spatial_shape(s, out_c, out_h, out_w)) {
        throw_error(ErrorKind::dimension, "conv2d grad_output " + shape_string(grad_output.shape()));
    }
    if (grad_weights.shape() != weights.shape() || grad_bias.size() != out_c) {
        throw_error(ErrorKind::dimension, "conv2d gradient buffers do not match weights");
    }
    const std::size_t plane = out_h * out_w;
    const std::size_t patch = s.channels * kernel * kernel;
    const bool direct = kernel == 1 && stride == 1;
    const std::size_t in_stride = s.channels * s.height * s.width;

    if (grad_input != nullptr) {
        *grad_input = Tensor<Real>(input.shape());
    }
    // Stride-1 'same' input gradients are a 'same' correlation of grad_output
    // with the spatially flipped, channel-transposed kernel.
    const bool transposed = grad_input != nullptr && !direct && stride == 1 && padding == Padding::same;
    std::vector<Real> flipped;
    std::vector<Real> gcol;
    const std::size_t gpatch = out_c * kernel * kernel;
    if (transposed) {
        flipped.resize(weights.size());
        const std::size_t kk = kernel * kernel;
        for (std::size_t o = 0; o < out_c; ++o) {
            for (std::size_t c = 0; c < s.channels; ++c) {
                for (std::size_t q = 0; q < kk; ++q) {
                    flipped[(c * out_c + o) * kk + q] = weights[(o * s.channels + c) * kk + (kk - 1 - q)];
                }
            }
        }
        gcol.resize(gpatch * plane);
    }
    std::vector<Real> col(direct ? 0 : patch * plane);
    std::vector<Real> dcol(direct || transposed || grad_input == nullptr ? 0 : patch * plane);
    for (std::size_t n = 0; n < s.batch; ++n) {
        const Real* image = input.data() + n * in_stride;
        const Real* gy = grad_output.data() + n * out_c * plane;
        const Real* cols = image;
        if (!direct) {
            im2col(image, s.channels, s.height, s.width, kernel, stride, pad, out_h, out_w, col.data());
            cols = col.data();
        }
        kernels::gemm<Real>(false, true, out_c, patch, plane, Real(1), gy, cols, Real(1), grad_weights.data());
        for (std::size_t o = 0; o < out_c; ++o) {
            Real acc = 0;
            for (std::size_t p = 0; p < plane; ++p) {
                acc += gy[o * plane + p];
            }
            grad_bias[o] += acc;
        }
        if (grad_input != nullptr) {
            Real* gx = grad_input->data() + n * in_stride;
            if (direct) {
                kernels::gemm<Real>(true, false, patch, plane, out_c, Real(1), weights.data(), gy, Real(0), gx);
            } else if (transposed) {
                im2col(gy, out_c, out_h, out_w, kernel, 1, pad, s.height, s.width, gcol.data());
                kernels::gemm<Real>(false, false, s.channels, s.height * s.width, gpatch, Real(1), flipped.data(),
                                    gcol.data(), Real(0), gx);
            } else {
                kernels::gemm<Real>(true, false, patch, plane, out_c, Real(1), weights.data(), gy, Real(0),
                                    dcol.data());
                col2im(dcol.data(), s.channels, s.height, s.width, kernel, stride, pad, out_h, out_w, gx);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// depthwise

namespace {

template <class Real>
void check_depthwise(const Spatial& s, const Tensor<Real>& weights, std::size_t bias_size) {
    if (weights.rank() != 3 || weights.dim(0) != s.channels || weights.dim(1) != weights.dim(2)) {
        throw_error(ErrorKind::dimension, "depthwise weights " + shape_string(weights.shape()) + " for " +
                                              std::to_string(s.channels) + " channels");
    }
    check_kernel(weights.dim(1), Padding::same);
    if (bias_size != s.channels) {
        throw_error(ErrorKind::dimension, "depthwise bias size " + std::to_string(bias_size) + " for " +
                                              std::to_string(s.channels) + " channels");
    }
}

}  // namespace

template <class Real>
Tensor<Real> depthwise_conv2d(const Tensor<Real>& input, const Tensor<Real>& weights, const Tensor<Real>& bias,
                              std::size_t stride, Padding padding) {
    const Spatial s = spatial_of(input.shape(), "depthwise_conv2d");
    check_depthwise(s, weights, bias.size());
    const std::size_t kernel = weights.dim(1);
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(padding_amount(kernel, padding));
    const std::size_t out_h = conv_output_extent(s.height, kernel, stride, padding);
    const std::size_t out_w = conv_output_extent(s.width, kernel, stride, padding);
    const auto H = static_cast<std::ptrdiff_t>(s.height);
    const auto W = static_cast<std::ptrdiff_t>(s.width);

    Tensor<Real> out(spatial_shape(s, s.channels, out_h, out_w));
    for (std::size_t n = 0; n < s.batch; ++n) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            const Real* src = input.data() + (n * s.channels + c) * s.height * s.width;
            const Real* w = weights.data() + c * kernel * kernel;
            Real* dst = out.data() + (n * s.channels + c) * out_h * out_w;
            for (std::size_t oy = 0; oy < out_h; ++oy) {
                for (std::size_t ox = 0; ox < out_w; ++ox) {
                    Real acc = bias[c];
                    const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * stride) - pad;
                    const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * stride) - pad;
                    for (std::size_t ki = 0; ki < kernel; ++ki) {
                        const std::ptrdiff_t iy = y0 + static_cast<std::ptrdiff_t>(ki);
                        if (iy < 0 || iy >= H) {
                            continue;
                        }
                        for (std::size_t kj = 0; kj < kernel; ++kj) {
                            const std::ptrdiff_t ix = x0 + static_cast<std::ptrdiff_t>(kj);
                            if (ix >= 0 && ix < W) {
                                acc += w[ki * kernel + kj] * src[iy * W + ix];
                            }
                        }
                    }
                    dst[oy * out_w + ox] = acc;
                }
            }
        }
    }
    return out;
}

template <class Real>
void depthwise_conv2d_backward(const Tensor<Real>& input, const Tensor<Real>& weights, std::size_t stride,
                               Padding padding, const Tensor<Real>& grad_output, Tensor<Real>* grad_input,
                               Tensor<Real>& grad_weights, Tensor<Real>& grad_bias) {
    const Spatial s = spatial_of(input.shape(), "depthwise_conv2d_backward");
    check_depthwise(s, weights, grad_bias.size());
    const std::size_t kernel = weights.dim(1);
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(padding_amount(kernel, padding));
    const std::size_t out_h = conv_output_extent(s.height, kernel, stride, padding);
    const std::size_t out_w = conv_output_extent(s.width, kernel, stride, padding);
    if (grad_output.shape() != spatial_shape(s, s.channels, out_h, out_w)) {
        throw_error(ErrorKind::dimension, "depthwise grad_output " + shape_string(grad_output.shape()));
    }
    const auto H = static_cast<std::ptrdiff_t>(s.height);
    const auto W = static_cast<std::ptrdiff_t>(s.width);
    if (grad_input != nullptr) {
        *grad_input = Tensor<Real>(input.shape());
    }
    for (std::size_t n = 0; n < s.batch; ++n) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            const std::size_t in_off = (n * s.channels + c) * s.height * s.width;
            const Real* src = input.data() + in_off;
            const Real* w = weights.data() + c * kernel * kernel;
            Real* gw = grad_weights.data() + c * kernel * kernel;
            Real* gx = grad_input != nullptr ? grad_input->data() + in_off : nullptr;
            const Real* gy = grad_output.data() + (n * s.channels + c) * out_h * out_w;
            Real bias_acc = 0;
            for (std::size_t oy = 0; oy < out_h; ++oy) {
                for (std::size_t ox = 0; ox < out_w; ++ox) {
                    const Real g = gy[oy * out_w + ox];
                    bias_acc += g;
                    const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * stride) - pad;
                    const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * stride) - pad;
                    for (std::size_t ki = 0; ki < kernel; ++ki) {
                        const std::ptrdiff_t iy = y0 + static_cast<std::ptrdiff_t>(ki);
                        if (iy < 0 || iy >= H) {
                            continue;
                        }
                        for (std::size_t kj = 0; kj < kernel; ++kj) {
                            const std::ptrdiff_t ix = x0 + static_cast<std::ptrdiff_t>(kj);
                            if (ix >= 0 && ix < W) {
                                gw[ki * kernel + kj] += g * src[iy * W + ix];
                                if (gx != nullptr) {
                                    gx[iy * W + ix] += g * w[ki * kernel + kj];
                                }
                            }
                        }
                    }
                }
            }
            grad_bias[c] += bias_acc;
        }
    }
}

template <class Real>
Tensor<Real> depthwise_separable(const Tensor<Real>& input, const Tensor<Real>& dw_weights,
                                 const Tensor<Real>& dw_bias, const Tensor<Real>& pw_weights,
                                 const Tensor<Real>& pw_bias, std::size_t stride, Padding padding) {
    if (pw_weights.rank() != 4 || pw_weights.dim(2) != 1 || pw_weights.dim(3) != 1 ||
        pw_weights.dim(1) != dw_weights.dim(0)) {
        throw_error(ErrorKind::dimension, "pointwise weights " + shape_string(pw_weights.shape()) +
                                              " do not follow depthwise weights " + shape_string(dw_weights.shape()));
    }
    const Tensor<Real> mid = depthwise_conv2d(input, dw_weights, dw_bias, stride, padding);
    return conv2d(mid, pw_weights, pw_bias, 1, Padding::valid);
}

// ---------------------------------------------------------------------------
// relu, pooling

template <class Real>
Tensor<Real> relu(const Tensor<Real>& input) {
    Tensor<Real> out = input;
    for (Real& v : out.values()) {
        v = v > Real(0) ? v : Real(0);
    }
    return out;
}

template <class Real>
Tensor<Real> relu_backward(const Tensor<Real>& input, const Tensor<Real>& grad_output) {
    if (input.shape() != grad_output.shape()) {
        throw_error(ErrorKind::dimension, "relu_backward shapes " + shape_string(input.shape()) + " and " +
                                              shape_string(grad_output.shape()));
    }
    Tensor<Real> out = grad_output;
    const Real* x = input.data();
    Real* g = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        g[i] = x[i] > Real(0) ? g[i] : Real(0);
    }
    return out;
}

template <class Real>
PoolResult<Real> maxpool2(const Tensor<Real>& input) {
    const Spatial s = spatial_of(input.shape(), "maxpool2");
    const std::size_t out_h = (s.height + 1) / 2;
    const std::size_t out_w = (s.width + 1) / 2;
    PoolResult<Real> result{Tensor<Real>(spatial_shape(s, s.channels, out_h, out_w)), {}};
    result.argmax.resize(result.output.size());
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < s.batch * s.channels; ++plane) {
        const std::size_t base = plane * s.height * s.width;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            for (std::size_t ox = 0; ox < out_w; ++ox, ++o) {
                Real best = -std::numeric_limits<Real>::infinity();
                std::size_t best_at = base + 2 * oy * s.width + 2 * ox;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    const std::size_t y = 2 * oy + dy;
                    if (y >= s.height) {
                        continue;
                    }
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t x = 2 * ox + dx;
                        if (x >= s.width) {
                            continue;
                        }
                        const std::size_t at = base + y * s.width + x;
                        if (input[at] > best) {
                            best = input[at];
                            best_at = at;
                        }
                    }
                }
                result.output[o] = best;
                result.argmax[o] = static_cast<std::uint32_t>(best_at);
            }
        }
    }
    return result;
}

template <class Real>
Tensor<Real> maxpool2_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                               const Tensor<Real>& grad_output) {
    if (argmax.size() != grad_output.size()) {
        throw_error(ErrorKind::dimension, "maxpool2_backward index count mismatch");
    }
    Tensor<Real> grad(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) {
        grad[argmax[i]] += grad_output[i];
    }
    return grad;
}

template <class Real>
Tensor<Real> global_avg_pool(const Tensor<Real>& input) {
    const Spatial s = spatial_of(input.shape(), "global_avg_pool");
    const std::size_t plane = s.height * s.width;
    Tensor<Real> out(s.batched ? Shape{s.batch, s.channels} : Shape{s.channels});
    for (std::size_t i = 0; i < s.batch * s.channels; ++i) {
        Real acc = 0;
        const Real* src = input.data() + i * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            acc += src[p];
        }
        out[i] = acc / static_cast<Real>(plane);
    }
    return out;
}

template <class Real>
Tensor<Real> global_avg_pool_backward(const Shape& input_shape, const Tensor<Real>& grad_output) {
    const Spatial s = spatial_of(input_shape, "global_avg_pool_backward");
    if (grad_output.size() != s.batch * s.channels) {
        throw_error(ErrorKind::dimension, "global_avg_pool_backward grad " + shape_string(grad_output.shape()));
    }
    const std::size_t plane = s.height * s.width;
    Tensor<Real> grad(input_shape);
    for (std::size_t i = 0; i < s.batch * s.channels; ++i) {
        const Real g = grad_output[i] / static_cast<Real>(plane);
        std::fill(grad.data() + i * plane, grad.data() + (i + 1) * plane, g);
    }
    return grad;
}

// ---------------------------------------------------------------------------
// dense, dropout, concat, softmax

template <class Real>
Tensor<Real> dense(const Tensor<Real>& input, const Tensor<Real>& weights, const Tensor<Real>& bias) {
    const Rows r = rows_of(input.shape(), "dense");
    if (weights.rank() != 2 || weights.dim(1) != r.width || bias.rank() != 1 || bias.dim(0) != weights.dim(0)) {
        throw_error(ErrorKind::dimension, "dense weights " + shape_string(weights.shape()) + " bias " +
                                              shape_string(bias.shape()) + " for input " +
                                              shape_string(input.shape()));
    }
    const std::size_t out_d = weights.dim(0);
    Tensor<Real> out(r.batched ? Shape{r.count, out_d} : Shape{out_d});
    for (std::size_t n = 0; n < r.count; ++n) {
        std::copy(bias.data(), bias.data() + out_d, out.data() + n * out_d);
    }
    kernels::gemm<Real>(false, true, r.count, out_d, r.width, Real(1), input.data(), weights.data(), Real(1),
                        out.data());
    return out;
}

template <class Real>
void dense_backward(const Tensor<Real>& input, const Tensor<Real>& weights, const Tensor<Real>& grad_output,
                    Tensor<Real>* grad_input, Tensor<Real>& grad_weights, Tensor<Real>& grad_bias) {
    const Rows r = rows_of(input.shape(), "dense_backward");
    const std::size_t out_d = weights.dim(0);
    if (grad_output.size() != r.count * out_d || grad_weights.shape() != weights.shape() ||
        grad_bias.size() != out_d) {
        throw_error(ErrorKind::dimension, "dense_backward buffers do not match");
    }
    kernels::gemm<Real>(true, false, out_d, r.width, r.count, Real(1), grad_output.data(), input.data(), Real(1),
                        grad_weights.data());
    for (std::size_t n = 0; n < r.count; ++n) {
        for (std::size_t o = 0; o < out_d; ++o) {
            grad_bias[o] += grad_output[n * out_d + o];
        }
    }
    if (grad_input != nullptr) {
        *grad_input = Tensor<Real>(input.shape());
        kernels::gemm<Real>(false, false, r.count, r.width, out_d, Real(1), grad_output.data(), weights.data(),
                            Real(0), grad_input->data());
    }
}

template <class Real>
DropoutResult<Real> dropout(const Tensor<Real>& input, double rate, Mode mode, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw_error(ErrorKind::config, "dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (mode == Mode::eval || rate == 0.0) {
        return {input, {}};
    }
    const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
    DropoutResult<Real> result{Tensor<Real>(input.shape()), Tensor<Real>(input.shape())};
    for (std::size_t i = 0; i < input.size(); ++i) {
        const Real m = rng.uniform() < rate ? Real(0) : keep_scale;
        result.mask[i] = m;
        result.output[i] = input[i] * m;
    }
    return result;
}

template <class Real>
Tensor<Real> dropout_backward(const Tensor<Real>& mask, const Tensor<Real>& grad_output) {
    if (mask.empty()) {
        return grad_output;
    }
    return mul(mask, grad_output);
}

template <class Real>
Tensor<Real> concat(std::span<const Tensor<Real>> features) {
    if (features.empty()) {
        throw_error(ErrorKind::config, "concat of an empty list");
    }
    const Rows first = rows_of(features[0].shape(), "concat");
    std::size_t total = 0;
    for (const auto& f : features) {
        const Rows r = rows_of(f.shape(), "concat");
        if (r.batched != first.batched || r.count != first.count) {
            throw_error(ErrorKind::dimension, "concat inputs disagree on batch layout: " +
                                                  shape_string(f.shape()) + " vs " + shape_string(features[0].shape()));
        }
        total += r.width;
    }
    Tensor<Real> out(first.batched ? Shape{first.count, total} : Shape{total});
    for (std::size_t n = 0; n < first.count; ++n) {
        Real* dst = out.data() + n * total;
        for (const auto& f : features) {
            const std::size_t w = f.size() / first.count;
            std::copy(f.data() + n * w, f.data() + (n + 1) * w, dst);
            dst += w;
        }
    }
    return out;
}

template <class Real>
std::vector<Tensor<Real>> concat_backward(const Tensor<Real>& grad_output, std::span<const std::size_t> widths) {
    const Rows r = rows_of(grad_output.shape(), "concat_backward");
    std::size_t total = 0;
    for (std::size_t w : widths) {
        total += w;
    }
    if (total != r.width) {
        throw_error(ErrorKind::dimension, "concat_backward widths sum to " + std::to_string(total) + ", grad is " +
                                              shape_string(grad_output.shape()));
    }
    std::vector<Tensor<Real>> parts;
    parts.reserve(widths.size());
    std::size_t offset = 0;
    for (std::size_t w : widths) {
        Tensor<Real> part(r.batched ? Shape{r.count, w} : Shape{w});
        for (std::size_t n = 0; n < r.count; ++n) {
            const Real* src = grad_output.data() + n * total + offset;
            std::copy(src, src + w, part.data() + n * w);
        }
        parts.push_back(std::move(part));
        offset += w;
    }
    return parts;
}

template <class Real>
SoftmaxCrossEntropy<Real> softmax_cross_entropy(const Tensor<Real>& logits, std::span<const int> labels) {
    const Rows r = rows_of(logits.shape(), "softmax_cross_entropy");
    if (r.width < 2) {
        throw_error(ErrorKind::config, "softmax needs at least two classes");
    }
    if (labels.size() != r.count) {
        throw_error(ErrorKind::data, std::to_string(labels.size()) + " labels for " + std::to_string(r.count) +
                                         " rows of logits");
    }
    SoftmaxCrossEntropy<Real> result{0.0, Tensor<Real>(logits.shape())};
    double total = 0.0;
    for (std::size_t n = 0; n < r.count; ++n) {
        const int label = labels[n];
        if (label < 0 || static_cast<std::size_t>(label) >= r.width) {
            throw_error(ErrorKind::data, "label " + std::to_string(label) + " out of range for " +
                                             std::to_string(r.width) + " classes");
        }
        const Real* z = logits.data() + n * r.width;
        Real* p = result.probs.data() + n * r.width;
        const Real peak = *std::max_element(z, z + r.width);
        double sum = 0.0;
        for (std::size_t k = 0; k < r.width; ++k) {
            sum += std::exp(static_cast<double>(z[k] - peak));
        }
        for (std::size_t k = 0; k < r.width; ++k) {
            p[k] = static_cast<Real>(std::exp(static_cast<double>(z[k] - peak)) / sum);
        }
        total += std::log(sum) - static_cast<double>(z[label] - peak);
    }
    result.loss = total / static_cast<double>(r.count);
    return result;
}

template <class Real>
Tensor<Real> softmax_cross_entropy_backward(const Tensor<Real>& probs, std::span<const int> labels) {
    const Rows r = rows_of(probs.shape(), "softmax_cross_entropy_backward");
    if (labels.size() != r.count) {
        throw_error(ErrorKind::data, "label count does not match probabilities");
    }
    Tensor<Real> grad = probs;
    const Real inv = Real(1) / static_cast<Real>(r.count);
    for (std::size_t n = 0; n < r.count; ++n) {
        const int label = labels[n];
        if (label < 0 || static_cast<std::size_t>(label) >= r.width) {
            throw_error(ErrorKind::data, "label " + std::to_string(label) + " out of range");
        }
        grad[n * r.width + static_cast<std::size_t>(label)] -= Real(1);
        for (std::size_t k = 0; k < r.width; ++k) {
            grad[n * r.width + k] *= inv;
        }
    }
    return grad;
}

// ---------------------------------------------------------------------------
// layer objects

namespace {

template <class Real>
void require_ready(const LayerContext<Real>& ctx, const char* layer) {
    if (!ctx.ready) {
        throw_error(ErrorKind::config, std::string(layer) + " backward called without a matching forward");
    }
}

Shape conv_shape(const Shape& in, std::size_t channels, std::size_t kernel, std::size_t stride, Padding padding) {
    if (in.size() != 3) {
        throw_error(ErrorKind::dimension, "per-sample shape must be [C,H,W], got " + shape_string(in));
    }
    return {channels, conv_output_extent(in[1], kernel, stride, padding),
            conv_output_extent(in[2], kernel, stride, padding)};
}

}  // namespace

template <class Real>
Conv2dLayer<Real>::Conv2dLayer(std::string name, std::size_t in_channels, std::size_t out_channels,
                               std::size_t kernel, std::size_t stride_, Padding padding_)
    : weight(name + ".weight", Tensor<Real>({out_channels, in_channels, kernel, kernel})),
      bias(name + ".bias", Tensor<Real>({out_channels})),
      stride(stride_),
      padding(padding_) {
    check_kernel(kernel, padding);
    check_stride(stride);
}

template <class Real>
Shape Conv2dLayer<Real>::output_shape(const Shape& in) const {
    if (in.size() == 3 && in[0] != weight.value.dim(1)) {
        throw_error(ErrorKind::dimension, weight.name + " expects " + std::to_string(weight.value.dim(1)) +
                                              " input channels, got " + std::to_string(in[0]));
    }
    return conv_shape(in, weight.value.dim(0), weight.value.dim(2), stride, padding);
}

template <class Real>
Tensor<Real> Conv2dLayer<Real>::forward(const Tensor<Real>& x, LayerContext<Real>& ctx, Mode mode, Rng&) const {
    ctx.mode = mode;
    ctx.ready = true;
    return conv2d(x, weight.value, bias.value, stride, padding);
}

template <class Real>
Tensor<Real> Conv2dLayer<Real>::backward(const Tensor<Real>& grad, const Tensor<Real>& input,
                                         const LayerContext<Real>& ctx, bool need_input_grad) {
    require_ready(ctx, "conv2d");
    Tensor<Real> grad_input;
    conv2d_backward(input, weight.value, stride, padding, grad, need_input_grad ? &grad_input : nullptr,
                    weight.grad, bias.grad);
    return grad_input;
}

template <class Real>
DepthwiseSeparableLayer<Real>::DepthwiseSeparableLayer(std::string name, std::size_t in_channels,
                                                       std::size_t out_channels, std::size_t kernel,
                                                       std::size_t stride_, Padding padding_)
    : dw_weight(name + ".dw.weight", Tensor<Real>({in_channels, kernel, kernel})),
      dw_bias(name + ".dw.bias", Tensor<Real>({in_channels})),
      pw_weight(name + ".pw.weight", Tensor<Real>({out_channels, in_channels, 1, 1})),
      pw_bias(name + ".pw.bias", Tensor<Real>({out_channels})),
      stride(stride_),
      padding(padding_) {
    check_kernel(kernel, padding);
    check_stride(stride);
}

template <class Real>
Shape DepthwiseSeparableLayer<Real>::output_shape(const Shape& in) const {
    if (in.size() == 3 && in[0] != dw_weight.value.dim(0)) {
        throw_error(ErrorKind::dimension, dw_weight.name + " expects " + std::to_string(dw_weight.value.dim(0)) +
                                              " input channels, got " + std::to_string(in[0]));
    }
    return conv_shape(in, pw_weight.value.dim(0), dw_weight.value.dim(1), stride, padding);
}

template <class Real>
Tensor<Real> DepthwiseSeparableLayer<Real>::forward(const Tensor<Real>& x, LayerContext<Real>& ctx, Mode mode,
                                                    Rng&) const {
    ctx.mode = mode;
    ctx.aux = depthwise_conv2d(x, dw_weight.value, dw_bias.value, stride, padding);
    ctx.ready = true;
    return conv2d(ctx.aux, pw_weight.value, pw_bias.value, 1, Padding::valid);
}

template <class Real>
Tensor<Real> DepthwiseSeparableLayer<Real>::backward(const Tensor<Real>& grad, const Tensor<Real>& input,
                                                     const LayerContext<Real>& ctx, bool need_input_grad) {
    require_ready(ctx, "depthwise_separable");
    Tensor<Real> grad_mid;
    conv2d_backward(ctx.aux, pw_weight.value, 1, Padding::valid, grad, &grad_mid, pw_weight.grad, pw_bias.grad);
    Tensor<Real> grad_input;
    depthwise_conv2d_backward(input, dw_weight.value, stride, padding, grad_mid,
                              need_input_grad ? &grad_input : nullptr, dw_weight.grad, dw_bias.grad);
    return grad_input;
}

template <class Real>
Tensor<Real> ReluLayer<Real>::forward(const Tensor<Real>& x, LayerContext<Real>& ctx, Mode mode, Rng&) const {
    ctx.mode = mode;
    ctx.ready = true;
    return relu(x);
}

template <class Real>
Tensor<Real> ReluLayer<Real>::backward(const Tensor<Real>& grad, const Tensor<Real>& input,
                                       const LayerContext<Real>& ctx, bool need_input_grad) {
    require_ready(ctx, "relu");
    return need_input_grad ? relu_backward(input, grad) : Tensor<Real>();
}

template <class Real>
Shape MaxPoolLayer<Real>::output_shape(const Shape& in) const {
    if (in.size() != 3) {
        throw_error(ErrorKind::dimension, "per-sample shape must be [C,H,W], got " + shape_string(in));
    }
    return {in[0], (in[1] + 1) / 2, (in[2] + 1) / 2};
}

template <class Real>
Tensor<Real> MaxPoolLayer<Real>::forward(const Tensor<Real>& x, LayerContext<Real>& ctx, Mode mode, Rng&) const {
    PoolResult<Real> pooled = maxpool2(x);
    ctx.mode = mode;
    ctx.indices = std::move(pooled.argmax);
    ctx.input_shape = x.shape();
    ctx.ready = true;
    return std::move(pooled.output);
}

template <class Real>
Tensor<Real> MaxPoolLayer<Real>::backward(const Tensor<Real>& grad, const Tensor<Real>&,
                                          const LayerContext<Real>& ctx, bool need_input_grad) {
    require_ready(ctx, "maxpool2");
    return need_input_grad ? maxpool2_backward(ctx.input_shape, std::span<const std::uint32_t>(ctx.indices), grad)
                           : Tensor<Real>();
}

template <class Real>
DenseLayer<Real>::DenseLayer(std::string name, std::size_t in_features, std::size_t out_features)
    : weight(name + ".weight", Tensor<Real>({out_features, in_features})),
      bias(name + ".bias", Tensor<Real>({out_features})) {}

template <class Real>
Tensor<Real> DenseLayer<Real>::forward(const Tensor<Real>& x, LayerContext<Real>& ctx, Mode mode, Rng&) const {
    ctx.mode = mode;
    ctx.ready = true;
    return dense(x, weight.value, bias.value);
}

template <class Real>
Tensor<Real> DenseLayer<Real>::backward(const Tensor<Real>& grad, const Tensor<Real>& input,
                                        const LayerContext<Real>& ctx, bool need_input_grad) {
    require_ready(ctx, "dense");
    Tensor<Real> grad_input;
    dense_backward(input, weight.value, grad, need_input_grad ? &grad_input : nullptr, weight.grad, bias.grad);
    return grad_input;
}

template <class Real>
Tensor<Real> DropoutLayer<Real>::forward(const Tensor<Real>& x, LayerContext<Real>& ctx, Mode mode,
                                         Rng& rng) const {
    DropoutResult<Real> result = dropout(x, rate, mode, rng);
    ctx.mode = mode;
    ctx.aux = std::move(result.mask);
    ctx.ready = true;
    return std::move(result.output);
}

template <class Real>
Tensor<Real> DropoutLayer<Real>::backward(const Tensor<Real>& grad, const Tensor<Real>&,
                                          const LayerContext<Real>& ctx, bool need_input_grad) {
    require_ready(ctx, "dropout");
    return need_input_grad ? dropout_backward(ctx.aux, grad) : Tensor<Real>();
}

#define FUSIONNET_INSTANTIATE(Real)                                                                            \
    template Tensor<Real> conv2d(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, std::size_t,   \
                                 Padding);                                                                     \
    template void conv2d_backward(const Tensor<Real>&, const Tensor<Real>&, std::size_t, Padding,              \
                                  const Tensor<Real>&, Tensor<Real>*, Tensor<Real>&, Tensor<Real>&);           \
    template Tensor<Real> depthwise_conv2d(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,      \
                                           std::size_t, Padding);                                              \
    template void depthwise_conv2d_backward(const Tensor<Real>&, const Tensor<Real>&, std::size_t, Padding,    \
                                            const Tensor<Real>&, Tensor<Real>*, Tensor<Real>&, Tensor<Real>&); \
    template Tensor<Real> depthwise_separable(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,   \
                                              const Tensor<Real>&, const Tensor<Real>&, std::size_t, Padding); \
    template Tensor<Real> relu(const Tensor<Real>&);                                                           \
    template Tensor<Real> relu_backward(const Tensor<Real>&, const Tensor<Real>&);                             \
    template PoolResult<Real> maxpool2(const Tensor<Real>&);                                                   \
    template Tensor<Real> maxpool2_backward(const Shape&, std::span<const std::uint32_t>, const Tensor<Real>&); \
    template Tensor<Real> global_avg_pool(const Tensor<Real>&);                                                \
    template Tensor<Real> global_avg_pool_backward(const Shape&, const Tensor<Real>&);                         \
    template Tensor<Real> dense(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&);                \
    template void dense_backward(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, Tensor<Real>*, \
                                 Tensor<Real>&, Tensor<Real>&);                                                \
    template DropoutResult<Real> dropout(const Tensor<Real>&, double, Mode, Rng&);                             \
    template Tensor<Real> dropout_backward(const Tensor<Real>&, const Tensor<Real>&);                          \
    template Tensor<Real> concat(std::span<const Tensor<Real>>);                                               \
    template std::vector<Tensor<Real>> concat_backward(const Tensor<Real>&, std::span<const std::size_t>);     \
    template SoftmaxCrossEntropy<Real> softmax_cross_entropy(const Tensor<Real>&, std::span<const int>);       \
    template Tensor<Real> softmax_cross_entropy_backward(const Tensor<Real>&, std::span<const int>);           \
    template struct Conv2dLayer<Real>;                                                                         \
    template struct DepthwiseSeparableLayer<Real>;                                                             \
    template struct ReluLayer<Real>;                                                                           \
    template struct MaxPoolLayer<Real>;                                                                        \
    template struct DenseLayer<Real>;                                                                          \
    template struct DropoutLayer<Real>;

FUSIONNET_INSTANTIATE(float)
FUSIONNET_INSTANTIATE(double)

#undef FUSIONNET_INSTANTIATE

}  // namespace fusionnet
