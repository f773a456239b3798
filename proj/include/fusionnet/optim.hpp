#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fusionnet/tensor.hpp"

namespace fusionnet {

enum class OptimizerKind { sgd, adam, rmsprop };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view text);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-3;
    double momentum = 0.9;  // sgd
    double beta1 = 0.7;     // adam
    double beta2 = 0.999;   // adam
    double rho = 0.8;       // rmsprop
    double epsilon = 1e-7;  // adam and rmsprop

    /// lr 1e-3 for Adam, 1e-4 for SGD and RMSProp; other fields as above.
    static OptimizerConfig defaults(OptimizerKind kind);
    void validate() const;
};

/// Moment buffers mirror the parameter list: velocity (sgd), m and v (adam),
/// mean square (rmsprop) live in `first` / `second`.
template <class Real>
struct OptimizerState {
    std::vector<Tensor<Real>> first;
    std::vector<Tensor<Real>> second;
    std::uint64_t step = 0;
};

// Single-tensor update rules. `step` is the already-incremented Adam t.

/// v <- mu v + g;  w <- w - lr v
template <class Real>
void sgd_momentum_step(Tensor<Real>& value, const Tensor<Real>& grad, Tensor<Real>& velocity,
                       const OptimizerConfig& config);

/// Adam with bias correction.
template <class Real>
void adam_step(Tensor<Real>& value, const Tensor<Real>& grad, Tensor<Real>& m, Tensor<Real>& v,
               std::uint64_t step, const OptimizerConfig& config);

/// s <- rho s + (1 - rho) g^2;  w <- w - lr g / (sqrt(s) + eps)
template <class Real>
void rmsprop_step(Tensor<Real>& value, const Tensor<Real>& grad, Tensor<Real>& mean_square,
                  const OptimizerConfig& config);

template <class Real>
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config);

    const OptimizerConfig& config() const noexcept { return config_; }
    OptimizerState<Real>& state() noexcept { return state_; }
    const OptimizerState<Real>& state() const noexcept { return state_; }

    /// One update over every trainable parameter, in order. Buffers are
    /// created on the first call.
    void step(const std::vector<Parameter<Real>*>& params);

private:
    OptimizerConfig config_;
    OptimizerState<Real> state_;
};

}  // namespace fusionnet
