#include "fusionnet/optim.hpp"

#include <cmath>

#include "fusionnet/errors.hpp"

namespace fusionnet {

std::string_view to_string(OptimizerKind kind) {
    switch (kind) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::adam: return "adam";
        case OptimizerKind::rmsprop: return "rmsprop";
    }
    return "?";
}

OptimizerKind parse_optimizer_kind(std::string_view text) {
    if (text == "sgd") return OptimizerKind::sgd;
    if (text == "adam") return OptimizerKind::adam;
    if (text == "rmsprop") return OptimizerKind::rmsprop;
    throw_error(ErrorKind::config, "unknown optimizer '" + std::string(text) + "' (adam|sgd|rmsprop)");
}

OptimizerConfig OptimizerConfig::defaults(OptimizerKind kind) {
    OptimizerConfig config;
    config.kind = kind;
    config.lr = kind == OptimizerKind::adam ? 1e-3 : 1e-4;
    return config;
}

void OptimizerConfig::validate() const {
    auto decay_ok = [](double d) { return d >= 0.0 && d < 1.0; };
    if (!(lr > 0.0) || !std::isfinite(lr)) {
        throw_error(ErrorKind::config, "lr must be positive");
    }
    if (!decay_ok(momentum) || !decay_ok(beta1) || !decay_ok(beta2) || !decay_ok(rho)) {
        throw_error(ErrorKind::config, "momentum, beta1, beta2 and rho must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) {
        throw_error(ErrorKind::config, "epsilon must be positive");
    }
}

namespace {

template <class Real>
void check_same(const Tensor<Real>& a, const Tensor<Real>& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw_error(ErrorKind::dimension, std::string(what) + " shape " + shape_string(b.shape()) +
                                              " does not mirror parameter " + shape_string(a.shape()));
    }
}

}  // namespace

template <class Real>
void sgd_momentum_step(Tensor<Real>& value, const Tensor<Real>& grad, Tensor<Real>& velocity,
                       const OptimizerConfig& config) {
    check_same(value, grad, "gradient");
    check_same(value, velocity, "velocity");
    const Real mu = static_cast<Real>(config.momentum);
    const Real lr = static_cast<Real>(config.lr);
    for (std::size_t i = 0; i < value.size(); ++i) {
        velocity[i] = mu * velocity[i] + grad[i];
        value[i] -= lr * velocity[i];
    }
}

template <class Real>
void adam_step(Tensor<Real>& value, const Tensor<Real>& grad, Tensor<Real>& m, Tensor<Real>& v,
               std::uint64_t step, const OptimizerConfig& config) {
    check_same(value, grad, "gradient");
    check_same(value, m, "first moment");
    check_same(value, v, "second moment");
    if (step == 0) {
        throw_error(ErrorKind::config, "adam step count must be incremented before the update");
    }
    const Real b1 = static_cast<Real>(config.beta1);
    const Real b2 = static_cast<Real>(config.beta2);
    const double t = static_cast<double>(step);
    const Real correction1 = static_cast<Real>(1.0 - std::pow(config.beta1, t));
    const Real correction2 = static_cast<Real>(1.0 - std::pow(config.beta2, t));
    const Real lr = static_cast<Real>(config.lr);
    const Real eps = static_cast<Real>(config.epsilon);
    for (std::size_t i = 0; i < value.size(); ++i) {
        const Real g = grad[i];
        m[i] = b1 * m[i] + (Real(1) - b1) * g;
        v[i] = b2 * v[i] + (Real(1) - b2) * g * g;
        const Real m_hat = m[i] / correction1;
        const Real v_hat = v[i] / correction2;
        value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

template <class Real>
void rmsprop_step(Tensor<Real>& value, const Tensor<Real>& grad, Tensor<Real>& mean_square,
                  const OptimizerConfig& config) {
    check_same(value, grad, "gradient");
    check_same(value, mean_square, "mean square");
    const Real rho = static_cast<Real>(config.rho);
    const Real lr = static_cast<Real>(config.lr);
    const Real eps = static_cast<Real>(config.epsilon);
    for (std::size_t i = 0; i < value.size(); ++i) {
        const Real g = grad[i];
        mean_square[i] = rho * mean_square[i] + (Real(1) - rho) * g * g;
        value[i] -= lr * g / (std::sqrt(mean_square[i]) + eps);
    }
}

template <class Real>
Optimizer<Real>::Optimizer(OptimizerConfig config) : config_(config) {
    config_.validate();
}

template <class Real>
void Optimizer<Real>::step(const std::vector<Parameter<Real>*>& params) {
    if (state_.first.empty()) {
        for (const Parameter<Real>* p : params) {
            state_.first.emplace_back(p->value.shape());
            if (config_.kind == OptimizerKind::adam) {
                state_.second.emplace_back(p->value.shape());
            }
        }
    }
    if (state_.first.size() != params.size()) {
        throw_error(ErrorKind::config, "optimizer state tracks " + std::to_string(state_.first.size()) +
                                           " parameters, got " + std::to_string(params.size()));
    }
    ++state_.step;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter<Real>& p = *params[i];
        if (!p.trainable) {
            continue;
        }
        switch (config_.kind) {
            case OptimizerKind::sgd:
                sgd_momentum_step(p.value, p.grad, state_.first[i], config_);
                break;
            case OptimizerKind::adam:
                adam_step(p.value, p.grad, state_.first[i], state_.second[i], state_.step, config_);
                break;
            case OptimizerKind::rmsprop:
                rmsprop_step(p.value, p.grad, state_.first[i], config_);
                break;
        }
    }
}

#define FUSIONNET_INSTANTIATE(Real)                                                                         \
    template void sgd_momentum_step(Tensor<Real>&, const Tensor<Real>&, Tensor<Real>&, const OptimizerConfig&); \
    template void adam_step(Tensor<Real>&, const Tensor<Real>&, Tensor<Real>&, Tensor<Real>&, std::uint64_t,     \
                            const OptimizerConfig&);                                                           \
    template void rmsprop_step(Tensor<Real>&, const Tensor<Real>&, Tensor<Real>&, const OptimizerConfig&);      \
    template class Optimizer<Real>;

FUSIONNET_INSTANTIATE(float)
FUSIONNET_INSTANTIATE(double)

#undef FUSIONNET_INSTANTIATE

}  // namespace fusionnet
