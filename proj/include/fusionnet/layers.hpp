#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fusionnet/rng.hpp"
#include "fusionnet/tensor.hpp"

namespace fusionnet {

enum class Mode { train, eval };
enum class Padding { valid, same };

std::size_t padding_amount(std::size_t kernel, Padding padding);
/// floor((in + 2p - k) / stride) + 1; throws a dimension error when the
/// kernel exceeds the padded input.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);

// ---------------------------------------------------------------------------
// Raw kernels. Spatial inputs are [B,C,H,W]; a rank-3 [C,H,W] input is a batch
// of one and produces a rank-3 result. Backward functions add into the weight
// and bias gradients and overwrite the input gradient.
// ---------------------------------------------------------------------------

/// Cross-correlation plus bias. weights [C_out,C_in,k,k], bias [C_out].
template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& weights, const Tensor<Real>& bias,
                    std::size_t stride, Padding padding);

template <class Real>
void conv2d_backward(const Tensor<Real>& input, const Tensor<Real>& weights, std::size_t stride, Padding padding,
                     const Tensor<Real>& grad_output, Tensor<Real>* grad_input, Tensor<Real>& grad_weights,
                     Tensor<Real>& grad_bias);

/// One k x k filter per channel. weights [C,k,k], bias [C].
template <class Real>
Tensor<Real> depthwise_conv2d(const Tensor<Real>& input, const Tensor<Real>& weights, const Tensor<Real>& bias,
                              std::size_t stride, Padding padding);

template <class Real>
void depthwise_conv2d_backward(const Tensor<Real>& input, const Tensor<Real>& weights, std::size_t stride,
                               Padding padding, const Tensor<Real>& grad_output, Tensor<Real>* grad_input,
                               Tensor<Real>& grad_weights, Tensor<Real>& grad_bias);

/// pointwise(depthwise(input)); pointwise weights are [C_out,C,1,1].
template <class Real>
Tensor<Real> depthwise_separable(const Tensor<Real>& input, const Tensor<Real>& dw_weights,
                                 const Tensor<Real>& dw_bias, const Tensor<Real>& pw_weights,
                                 const Tensor<Real>& pw_bias, std::size_t stride, Padding padding);

template <class Real>
Tensor<Real> relu(const Tensor<Real>& input);

/// Gradient passes where input > 0; zero at the kink.
template <class Real>
Tensor<Real> relu_backward(const Tensor<Real>& input, const Tensor<Real>& grad_output);

template <class Real>
struct PoolResult {
    Tensor<Real> output;
    std::vector<std::uint32_t> argmax;  // flat input offset per output element
};

/// 2x2 window, stride 2. Odd extents are padded with -inf on the bottom/right;
/// ties resolve to the first element in row-major window order.
template <class Real>
PoolResult<Real> maxpool2(const Tensor<Real>& input);

template <class Real>
Tensor<Real> maxpool2_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                               const Tensor<Real>& grad_output);

/// [B,C,H,W] -> [B,C] (or [C,H,W] -> [C]).
template <class Real>
Tensor<Real> global_avg_pool(const Tensor<Real>& input);

template <class Real>
Tensor<Real> global_avg_pool_backward(const Shape& input_shape, const Tensor<Real>& grad_output);

/// W x + b for [D_in] or [B,D_in] inputs; weights [D_out,D_in].
template <class Real>
Tensor<Real> dense(const Tensor<Real>& input, const Tensor<Real>& weights, const Tensor<Real>& bias);

template <class Real>
void dense_backward(const Tensor<Real>& input, const Tensor<Real>& weights, const Tensor<Real>& grad_output,
                    Tensor<Real>* grad_input, Tensor<Real>& grad_weights, Tensor<Real>& grad_bias);

template <class Real>
struct DropoutResult {
    Tensor<Real> output;
    Tensor<Real> mask;  // 0 or 1/(1-rate) per element; empty in eval mode
};

/// Inverted dropout. Eval mode (or rate 0) returns the input unchanged.
/// rate must lie in [0, 1).
template <class Real>
DropoutResult<Real> dropout(const Tensor<Real>& input, double rate, Mode mode, Rng& rng);

template <class Real>
Tensor<Real> dropout_backward(const Tensor<Real>& mask, const Tensor<Real>& grad_output);

/// Concatenates rank-1 vectors, or rank-2 [B,D_i] rows along the feature axis.
template <class Real>
Tensor<Real> concat(std::span<const Tensor<Real>> features);

template <class Real>
std::vector<Tensor<Real>> concat_backward(const Tensor<Real>& grad_output, std::span<const std::size_t> widths);

template <class Real>
struct SoftmaxCrossEntropy {
    double loss = 0.0;  // mean over the batch
    Tensor<Real> probs;
};

/// logits [K] or [B,K]; one label per row.
template <class Real>
SoftmaxCrossEntropy<Real> softmax_cross_entropy(const Tensor<Real>& logits, std::span<const int> labels);

/// (probs - onehot) / B.
template <class Real>
Tensor<Real> softmax_cross_entropy_backward(const Tensor<Real>& probs, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Layer objects used by the network graph. Each owns its parameters; backward
// must follow a forward into the same context.
// ---------------------------------------------------------------------------

/// Per-call state a layer needs for backward beyond its input, which the
/// caller keeps (the network retains every activation of a forward pass).
template <class Real>
struct LayerContext {
    Mode mode = Mode::eval;
    bool ready = false;
    Tensor<Real> aux;
    std::vector<std::uint32_t> indices;
    Shape input_shape;
};

template <class Real>
struct Conv2dLayer {
    Parameter<Real> weight;
    Parameter<Real> bias;
    std::size_t stride = 1;
    Padding padding = Padding::same;

    Conv2dLayer(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                std::size_t stride, Padding padding);
    Shape output_shape(const Shape& in) const;
    Tensor<Real> forward(const Tensor<Real>& x, LayerContext<Real>& ctx, Mode mode, Rng& rng) const;
    Tensor<Real> backward(const Tensor<Real>& grad, const Tensor<Real>& input, const LayerContext<Real>& ctx,
                          bool need_input_grad);
    void collect(std::vector<Parameter<Real>*>& out) { out.push_back(&weight), out.push_back(&bias); }
};

template <class Real>
struct DepthwiseSeparableLayer {
    Parameter<Real> dw_weight;
    Parameter<Real> dw_bias;
    Parameter<Real> pw_weight;
    Parameter<Real> pw_bias;
    std::size_t stride = 1;
    Padding padding = Padding::same;

    DepthwiseSeparableLayer(std::string name, std::size_t in_channels, std::size_t out_channels,
                            std::size_t kernel, std::size_t stride, Padding padding);
    Shape output_shape(const Shape& in) const;
    Tensor<Real> forward(const Tensor<Real>& x, LayerContext<Real>& ctx, Mode mode, Rng& rng) const;
    Tensor<Real> backward(const Tensor<Real>& grad, const Tensor<Real>& input, const LayerContext<Real>& ctx,
                          bool need_input_grad);
    void collect(std::vector<Parameter<Real>*>& out) {
        out.push_back(&dw_weight), out.push_back(&dw_bias), out.push_back(&pw_weight), out.push_back(&pw_bias);
    }
};

template <class Real>
struct ReluLayer {
    Shape output_shape(const Shape& in) const { return in; }
    Tensor<Real> forward(const Tensor<Real>& x, LayerContext<Real>& ctx, Mode mode, Rng& rng) const;
    Tensor<Real> backward(const Tensor<Real>& grad, const Tensor<Real>& input, const LayerContext<Real>& ctx,
                          bool need_input_grad);
    void collect(std::vector<Parameter<Real>*>&) {}
};

template <class Real>
struct MaxPoolLayer {
    Shape output_shape(const Shape& in) const;
    Tensor<Real> forward(const Tensor<Real>& x, LayerContext<Real>& ctx, Mode mode, Rng& rng) const;
    Tensor<Real> backward(const Tensor<Real>& grad, const Tensor<Real>& input, const LayerContext<Real>& ctx,
                          bool need_input_grad);
    void collect(std::vector<Parameter<Real>*>&) {}
};

template <class Real>
struct DenseLayer {
    Parameter<Real> weight;
    Parameter<Real> bias;

    DenseLayer(std::string name, std::size_t in_features, std::size_t out_features);
    Tensor<Real> forward(const Tensor<Real>& x, LayerContext<Real>& ctx, Mode mode, Rng& rng) const;
    Tensor<Real> backward(const Tensor<Real>& grad, const Tensor<Real>& input, const LayerContext<Real>& ctx,
                          bool need_input_grad);
    void collect(std::vector<Parameter<Real>*>& out) { out.push_back(&weight), out.push_back(&bias); }
};

template <class Real>
struct DropoutLayer {
    double rate = 0.0;

    Tensor<Real> forward(const Tensor<Real>& x, LayerContext<Real>& ctx, Mode mode, Rng& rng) const;
    Tensor<Real> backward(const Tensor<Real>& grad, const Tensor<Real>& input, const LayerContext<Real>& ctx,
                          bool need_input_grad);
    void collect(std::vector<Parameter<Real>*>&) {}
};

}  // namespace fusionnet
