#include "fusionnet/network.hpp"

#include <algorithm>
#include <cmath>

#include "fusionnet/errors.hpp"

namespace fusionnet {

VggPlan VggPlan::toy() {
    return {{{16, 2}, {32, 2}, {64, 2}}};
}

VggPlan VggPlan::full_scale() {
    return {{{64, 2}, {128, 2}, {256, 3}, {512, 3}, {512, 3}}};
}

MobilenetPlan MobilenetPlan::toy() {
    return {16, {{16, 1}, {32, 2}, {32, 1}, {64, 2}, {64, 1}}, {}};
}

MobilenetPlan MobilenetPlan::full_scale() {
    MobilenetPlan plan;
    plan.stem_width = 32;
    plan.blocks = {{64, 1}, {128, 2}, {128, 1}, {256, 2}, {256, 1}, {512, 2}};
    for (int i = 0; i < 5; ++i) {
        plan.blocks.push_back({512, 1});
    }
    plan.blocks.push_back({1024, 2});
    plan.blocks.push_back({1024, 1});
    return plan;
}

std::vector<std::size_t> default_tap_blocks(std::size_t block_count) {
    std::vector<std::size_t> taps;
    for (std::size_t i = 1; i <= kMobilenetTaps; ++i) {
        taps.push_back(i * block_count / kMobilenetTaps - 1);
    }
    return taps;
}

NetworkSpec build_vgg_branch(const VggPlan& plan, InputSize input) {
    if (plan.stages.empty()) {
        throw_error(ErrorKind::config, "VGG plan needs at least one stage");
    }
    BranchSpec branch{"vgg", {}, {}};
    for (const VggStage& stage : plan.stages) {
        if (stage.width == 0 || stage.convs == 0) {
            throw_error(ErrorKind::config, "VGG stages need positive width and conv count");
        }
        for (std::size_t c = 0; c < stage.convs; ++c) {
            branch.layers.push_back({LayerKind::conv, stage.width, 3, 1, Padding::same});
            branch.layers.push_back({LayerKind::relu});
        }
        branch.layers.push_back({LayerKind::maxpool});
    }
    branch.taps.push_back(branch.layers.size() - 1);
    NetworkSpec spec{input, {std::move(branch)}, std::nullopt, 2};
    validate(spec);
    return spec;
}

NetworkSpec build_mobilenet_branch(const MobilenetPlan& plan, InputSize input) {
    if (plan.blocks.size() < kMobilenetTaps) {
        throw_error(ErrorKind::config, "MobileNet plan needs at least 5 depthwise-separable blocks, got " +
                                           std::to_string(plan.blocks.size()));
    }
    std::vector<std::size_t> tap_blocks =
        plan.tap_blocks.empty() ? default_tap_blocks(plan.blocks.size()) : plan.tap_blocks;
    if (tap_blocks.size() != kMobilenetTaps) {
        throw_error(ErrorKind::config, "MobileNet branch needs exactly 5 taps, got " +
                                           std::to_string(tap_blocks.size()));
    }
    BranchSpec branch{"mobile", {}, {}};
    branch.layers.push_back({LayerKind::conv, plan.stem_width, 3, 2, Padding::same});
    branch.layers.push_back({LayerKind::relu});
    for (std::size_t b = 0; b < plan.blocks.size(); ++b) {
        if (plan.blocks[b].width == 0 || plan.blocks[b].stride == 0) {
            throw_error(ErrorKind::config, "MobileNet blocks need positive width and stride");
        }
        branch.layers.push_back({LayerKind::depthwise_separable, plan.blocks[b].width, 3, plan.blocks[b].stride,
                                 Padding::same});
        branch.layers.push_back({LayerKind::relu});
    }
    for (std::size_t b : tap_blocks) {
        if (b >= plan.blocks.size()) {
            throw_error(ErrorKind::config, "tap block index " + std::to_string(b) + " out of range");
        }
        branch.taps.push_back(3 + 2 * b);  // the relu after block b
    }
    // Layers past the last designated tap would never receive a gradient.
    const std::size_t last = branch.taps.back();
    branch.layers.resize(std::min(branch.layers.size(), last + 1));
    NetworkSpec spec{input, {std::move(branch)}, std::nullopt, 2};
    validate(spec);
    return spec;
}

NetworkSpec build_hybrid(const NetworkSpec& vgg, const NetworkSpec& mobile, HeadSpec head) {
    if (vgg.branches.size() != 1 || mobile.branches.size() != 1) {
        throw_error(ErrorKind::config, "build_hybrid expects two single-branch specs");
    }
    if (!(vgg.input == mobile.input)) {
        throw_error(ErrorKind::config, "branch input sizes differ: " + shape_string(vgg.input.shape()) + " vs " +
                                           shape_string(mobile.input.shape()));
    }
    NetworkSpec spec{vgg.input, {vgg.branches[0], mobile.branches[0]}, head, vgg.classes};
    validate(spec);
    return spec;
}

NetworkSpec plain_network(NetworkSpec branch) {
    if (branch.branches.size() != 1) {
        throw_error(ErrorKind::config, "plain_network expects a single-branch spec");
    }
    BranchSpec& b = branch.branches[0];
    b.taps = {b.taps.back()};
    validate(branch);
    return branch;
}

ShapeReport propagate_shapes(const NetworkSpec& spec) {
    if (spec.input.channels == 0 || spec.input.height == 0 || spec.input.width == 0) {
        throw_error(ErrorKind::config, "input size must be positive");
    }
    if (spec.branches.empty()) {
        throw_error(ErrorKind::config, "network needs at least one branch");
    }
    if (spec.classes < 2) {
        throw_error(ErrorKind::config, "classifier needs at least two classes");
    }
    if (spec.head.has_value() != (spec.branches.size() > 1)) {
        throw_error(ErrorKind::config, "a fusion head is required exactly when the network has several branches");
    }
    if (spec.head) {
        if (spec.head->hidden_units == 0) {
            throw_error(ErrorKind::config, "head needs at least one hidden unit");
        }
        if (!(spec.head->dropout >= 0.0 && spec.head->dropout < 1.0)) {
            throw_error(ErrorKind::config, "head dropout must lie in [0, 1)");
        }
    }
    ShapeReport report;
    for (const BranchSpec& branch : spec.branches) {
        if (branch.layers.empty() || branch.taps.empty()) {
            throw_error(ErrorKind::config, "branch '" + branch.name + "' needs layers and at least one tap");
        }
        for (std::size_t i = 0; i < branch.taps.size(); ++i) {
            if (branch.taps[i] >= branch.layers.size() || (i > 0 && branch.taps[i] <= branch.taps[i - 1])) {
                throw_error(ErrorKind::config, "branch '" + branch.name + "' taps must be strictly increasing layer indices");
            }
        }
        if (branch.taps.back() != branch.layers.size() - 1) {
            throw_error(ErrorKind::config, "branch '" + branch.name + "' must tap its final layer");
        }
        std::vector<Shape> outputs;
        Shape shape = spec.input.shape();
        for (std::size_t i = 0; i < branch.layers.size(); ++i) {
            const LayerDesc& layer = branch.layers[i];
            try {
                switch (layer.kind) {
                    case LayerKind::conv:
                    case LayerKind::depthwise_separable:
                        if (layer.out_channels == 0 || layer.kernel == 0 || layer.stride == 0 ||
                            (layer.padding == Padding::same && layer.kernel % 2 == 0)) {
                            throw_error(ErrorKind::config,
                                        "layer needs positive channels, a positive kernel (odd for same padding) "
                                        "and stride >= 1");
                        }
                        shape = {layer.out_channels, conv_output_extent(shape[1], layer.kernel, layer.stride, layer.padding),
                                 conv_output_extent(shape[2], layer.kernel, layer.stride, layer.padding)};
                        break;
                    case LayerKind::relu:
                        break;
                    case LayerKind::maxpool:
                        if (shape[1] < 2 || shape[2] < 2) {
                            throw_error(ErrorKind::config, "input too small for the pooling depth at layer " +
                                                               std::to_string(i) + " of branch '" + branch.name + "'");
                        }
                        shape = {shape[0], (shape[1] + 1) / 2, (shape[2] + 1) / 2};
                        break;
                }
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::config) {
                    throw;
                }
                throw_error(ErrorKind::config, "branch '" + branch.name + "' layer " + std::to_string(i) + ": " + e.what());
            }
            outputs.push_back(shape);
        }
        for (std::size_t t : branch.taps) {
            report.tap_lengths.push_back(outputs[t][0]);
            report.fused_length += outputs[t][0];
        }
        report.layer_outputs.push_back(std::move(outputs));
    }
    return report;
}

void validate(const NetworkSpec& spec) {
    (void)propagate_shapes(spec);
}

std::size_t head_parameter_count(const NetworkSpec& spec) {
    const ShapeReport report = propagate_shapes(spec);
    if (spec.head) {
        const std::size_t hidden = spec.head->hidden_units;
        return report.fused_length * hidden + hidden + hidden * spec.classes + spec.classes;
    }
    return report.fused_length * spec.classes + spec.classes;
}

std::size_t parameter_count(const NetworkSpec& spec) {
    const ShapeReport report = propagate_shapes(spec);
    std::size_t total = head_parameter_count(spec);
    for (std::size_t b = 0; b < spec.branches.size(); ++b) {
        std::size_t channels = spec.input.channels;
        const auto& layers = spec.branches[b].layers;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const LayerDesc& l = layers[i];
            if (l.kind == LayerKind::conv) {
                total += l.out_channels * channels * l.kernel * l.kernel + l.out_channels;
            } else if (l.kind == LayerKind::depthwise_separable) {
                total += channels * l.kernel * l.kernel + channels + l.out_channels * channels + l.out_channels;
            }
            channels = report.layer_outputs[b][i][0];
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Network

template <class Real>
Network<Real>::Network(NetworkSpec spec) : spec_(std::move(spec)), shapes_(propagate_shapes(spec_)) {
    for (const BranchSpec& bs : spec_.branches) {
        Branch branch;
        branch.taps = bs.taps;
        std::size_t channels = spec_.input.channels;
        for (std::size_t i = 0; i < bs.layers.size(); ++i) {
            const LayerDesc& l = bs.layers[i];
            const std::string name = bs.name + "." + std::to_string(i);
            switch (l.kind) {
                case LayerKind::conv:
                    branch.layers.emplace_back(
                        Conv2dLayer<Real>(name + ".conv", channels, l.out_channels, l.kernel, l.stride, l.padding));
                    channels = l.out_channels;
                    break;
                case LayerKind::depthwise_separable:
                    branch.layers.emplace_back(DepthwiseSeparableLayer<Real>(name + ".dwsep", channels, l.out_channels,
                                                                             l.kernel, l.stride, l.padding));
                    channels = l.out_channels;
                    break;
                case LayerKind::relu:
                    branch.layers.emplace_back(ReluLayer<Real>{});
                    break;
                case LayerKind::maxpool:
                    branch.layers.emplace_back(MaxPoolLayer<Real>{});
                    break;
            }
        }
        branches_.push_back(std::move(branch));
    }
    if (spec_.head) {
        hidden_.emplace("head.hidden", shapes_.fused_length, spec_.head->hidden_units);
        hidden_dropout_.rate = spec_.head->dropout;
        output_.emplace("head.output", spec_.head->hidden_units, spec_.classes);
    } else {
        output_.emplace("head.output", shapes_.fused_length, spec_.classes);
    }
}

template <class Real>
std::vector<Parameter<Real>*> Network<Real>::parameters() {
    std::vector<Parameter<Real>*> out;
    for (Branch& branch : branches_) {
        for (BranchLayer& layer : branch.layers) {
            std::visit([&](auto& l) { l.collect(out); }, layer);
        }
    }
    if (hidden_) {
        hidden_->collect(out);
    }
    output_->collect(out);
    return out;
}

template <class Real>
std::vector<const Parameter<Real>*> Network<Real>::parameters() const {
    auto mutable_params = const_cast<Network*>(this)->parameters();
    return {mutable_params.begin(), mutable_params.end()};
}

template <class Real>
Parameter<Real>& Network<Real>::parameter(const std::string& name) {
    for (Parameter<Real>* p : parameters()) {
        if (p->name == name) {
            return *p;
        }
    }
    throw_error(ErrorKind::config, "no parameter named '" + name + "'");
}

template <class Real>
void Network<Real>::zero_grad() {
    for (Parameter<Real>* p : parameters()) {
        p->zero_grad();
    }
}

template <class Real>
ForwardPass<Real> Network<Real>::forward(const Tensor<Real>& batch, Mode mode, Rng& rng) const {
    ForwardPass<Real> pass;
    pass.mode = mode;
    const Shape expected = spec_.input.shape();
    if (batch.rank() == 3 && batch.shape() == expected) {
        pass.input = batch.reshaped({1, expected[0], expected[1], expected[2]});
    } else if (batch.rank() == 4 && Shape(batch.shape().begin() + 1, batch.shape().end()) == expected) {
        pass.input = batch;
    } else {
        throw_error(ErrorKind::dimension, "network expects [B]" + shape_string(expected) + " inputs, got " +
                                              shape_string(batch.shape()));
    }
    for (const Branch& branch : branches_) {
        std::vector<Tensor<Real>> acts;
        std::vector<LayerContext<Real>> ctxs(branch.layers.size());
        acts.reserve(branch.layers.size());
        for (std::size_t i = 0; i < branch.layers.size(); ++i) {
            const Tensor<Real>& x = i == 0 ? pass.input : acts.back();
            acts.push_back(std::visit([&](const auto& l) { return l.forward(x, ctxs[i], mode, rng); }, branch.layers[i]));
        }
        for (std::size_t t : branch.taps) {
            pass.taps.push_back(global_avg_pool(acts[t]));
        }
        pass.activations.push_back(std::move(acts));
        pass.contexts.push_back(std::move(ctxs));
    }
    pass.fused = concat(std::span<const Tensor<Real>>(pass.taps));
    head_forward_into(pass, rng);
    return pass;
}

template <class Real>
void Network<Real>::head_forward_into(ForwardPass<Real>& pass, Rng& rng) const {
    if (hidden_) {
        pass.hidden = hidden_->forward(pass.fused, pass.hidden_ctx, pass.mode, rng);
        pass.activated = hidden_relu_.forward(pass.hidden, pass.relu_ctx, pass.mode, rng);
        pass.dropped = hidden_dropout_.forward(pass.activated, pass.dropout_ctx, pass.mode, rng);
        pass.logits = output_->forward(pass.dropped, pass.output_ctx, pass.mode, rng);
    } else {
        pass.logits = output_->forward(pass.fused, pass.output_ctx, pass.mode, rng);
    }
}

template <class Real>
Tensor<Real> Network<Real>::head_forward(const Tensor<Real>& fused, Mode mode, Rng& rng) const {
    if (fused.rank() != 2 || fused.dim(1) != shapes_.fused_length) {
        throw_error(ErrorKind::dimension, "head expects [B," + std::to_string(shapes_.fused_length) + "], got " +
                                              shape_string(fused.shape()));
    }
    ForwardPass<Real> pass;
    pass.mode = mode;
    pass.fused = fused;
    head_forward_into(pass, rng);
    return std::move(pass.logits);
}

template <class Real>
double Network<Real>::backward(ForwardPass<Real>& pass, std::span<const int> labels) {
    if (pass.activations.size() != branches_.size() || pass.logits.empty()) {
        throw_error(ErrorKind::config, "backward needs a forward pass from this network");
    }
    const SoftmaxCrossEntropy<Real> ce = softmax_cross_entropy(pass.logits, labels);
    const Tensor<Real> grad_logits = softmax_cross_entropy_backward(ce.probs, labels);

    Tensor<Real> grad_fused;
    if (hidden_) {
        Tensor<Real> g = output_->backward(grad_logits, pass.dropped, pass.output_ctx, true);
        g = hidden_dropout_.backward(g, pass.activated, pass.dropout_ctx, true);
        g = hidden_relu_.backward(g, pass.hidden, pass.relu_ctx, true);
        grad_fused = hidden_->backward(g, pass.fused, pass.hidden_ctx, true);
    } else {
        grad_fused = output_->backward(grad_logits, pass.fused, pass.output_ctx, true);
    }
    const std::vector<Tensor<Real>> grad_taps =
        concat_backward(grad_fused, std::span<const std::size_t>(shapes_.tap_lengths));

    std::size_t tap_index = 0;
    for (std::size_t b = 0; b < branches_.size(); ++b) {
        Branch& branch = branches_[b];
        const auto& acts = pass.activations[b];
        const std::size_t first_tap = tap_index;
        tap_index += branch.taps.size();
        std::size_t next_tap = branch.taps.size();  // walk taps from the back
        Tensor<Real> grad;
        for (std::size_t i = branch.layers.size(); i-- > 0;) {
            if (next_tap > 0 && branch.taps[next_tap - 1] == i) {
                --next_tap;
                Tensor<Real> g = global_avg_pool_backward(acts[i].shape(), grad_taps[first_tap + next_tap]);
                grad = grad.empty() ? std::move(g) : add(grad, g);
            }
            const Tensor<Real>& input = i == 0 ? pass.input : acts[i - 1];
            const bool need_input_grad = i > 0;
            grad = std::visit(
                [&](auto& l) { return l.backward(grad, input, pass.contexts[b][i], need_input_grad); },
                branch.layers[i]);
        }
    }
    return ce.loss;
}

template <class Real>
Network<Real> init_params(const NetworkSpec& spec, std::uint64_t seed) {
    Network<Real> net(spec);
    net.set_seed(seed);
    Rng rng = Rng::derive(seed, 0x1417);
    for (Parameter<Real>* p : net.parameters()) {
        if (p->value.rank() < 2) {
            p->value.fill(Real(0));
            continue;
        }
        const double fan_in = static_cast<double>(p->value.size() / p->value.dim(0));
        const double std_dev = std::sqrt(2.0 / fan_in);
        for (Real& v : p->value.values()) {
            v = static_cast<Real>(std_dev * rng.normal());
        }
    }
    return net;
}

template class Network<float>;
template class Network<double>;
template Network<float> init_params<float>(const NetworkSpec&, std::uint64_t);
template Network<double> init_params<double>(const NetworkSpec&, std::uint64_t);

}  // namespace fusionnet
