#include "fusionnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "fusionnet/network.hpp"

namespace fusionnet {

namespace {

using T = Tensor<double>;

T random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    T t(std::move(shape));
    for (double& v : t.values()) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

/// Values bounded away from zero, so relu has no kink within the step.
T away_from_zero(Shape shape, Rng& rng, double margin = 0.05) {
    T t(std::move(shape));
    for (double& v : t.values()) {
        const double mag = rng.uniform(margin, 1.0);
        v = rng.bernoulli(0.5) ? mag : -mag;
    }
    return t;
}

/// Distinct values spaced 0.01 apart in shuffled order, so no pooling window
/// has a near-tie.
T distinct_values(Shape shape, Rng& rng) {
    T t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = 0.01 * static_cast<double>(i) - 0.5;
    }
    for (std::size_t i = t.size(); i > 1; --i) {
        std::swap(t[i - 1], t[rng.below(i)]);
    }
    return t;
}

double weighted_sum(const T& out, const T& weights) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        s += out[i] * weights[i];
    }
    return s;
}

/// Compares `analytic` against central differences of `loss` with respect to
/// the tensor `x`, which is perturbed in place and restored.
struct Checker {
    double step;
    double worst = 0.0;
    std::size_t coordinates = 0;

    void against(T& x, const T& analytic, const std::function<double()>& loss) {
        const T numeric = finite_diff_grad<double>(
            [&](const T& probe) {
                const T saved = x;
                x = probe;
                const double value = loss();
                x = saved;
                return value;
            },
            x, step);
        worst = std::max(worst, max_relative_error(analytic, numeric));
        coordinates += x.size();
    }
};

struct ItemContext {
    Rng& rng;
    double step;
    bool corrupt;
};

using ItemFn = std::function<Checker(ItemContext&)>;

void maybe_corrupt(T& grad, bool corrupt) {
    if (corrupt) {
        for (double& g : grad.values()) {
            g *= 1.05;
        }
        if (!grad.empty()) {
            grad[0] += 0.1;
        }
    }
}

Checker check_conv(ItemContext& c, std::size_t kernel, std::size_t stride, Padding padding, Shape input_shape,
                   std::size_t out_channels) {
    T x = random_tensor(input_shape, c.rng);
    T w = random_tensor({out_channels, input_shape[1], kernel, kernel}, c.rng);
    T b = random_tensor({out_channels}, c.rng);
    const T probe = random_tensor(conv2d(x, w, b, stride, padding).shape(), c.rng);
    T gx;
    T gw(w.shape());
    T gb(b.shape());
    conv2d_backward(x, w, stride, padding, probe, &gx, gw, gb);
    maybe_corrupt(gw, c.corrupt);
    auto loss = [&] { return weighted_sum(conv2d(x, w, b, stride, padding), probe); };
    Checker chk{c.step};
    chk.against(x, gx, loss);
    chk.against(w, gw, loss);
    chk.against(b, gb, loss);
    return chk;
}

Checker check_depthwise(ItemContext& c) {
    T x = random_tensor({2, 3, 5, 5}, c.rng);
    T w = random_tensor({3, 3, 3}, c.rng);
    T b = random_tensor({3}, c.rng);
    const T probe = random_tensor(depthwise_conv2d(x, w, b, 2, Padding::same).shape(), c.rng);
    T gx;
    T gw(w.shape());
    T gb(b.shape());
    depthwise_conv2d_backward(x, w, 2, Padding::same, probe, &gx, gw, gb);
    maybe_corrupt(gw, c.corrupt);
    auto loss = [&] { return weighted_sum(depthwise_conv2d(x, w, b, 2, Padding::same), probe); };
    Checker chk{c.step};
    chk.against(x, gx, loss);
    chk.against(w, gw, loss);
    chk.against(b, gb, loss);
    return chk;
}

Checker check_separable(ItemContext& c) {
    DepthwiseSeparableLayer<double> layer("dwsep", 3, 4, 3, 1, Padding::same);
    T x = random_tensor({2, 3, 4, 4}, c.rng);
    for (Parameter<double>* p : std::vector<Parameter<double>*>{&layer.dw_weight, &layer.dw_bias, &layer.pw_weight,
                                                                &layer.pw_bias}) {
        p->value = random_tensor(p->value.shape(), c.rng);
    }
    LayerContext<double> ctx;
    const T out = layer.forward(x, ctx, Mode::train, c.rng);
    const T probe = random_tensor(out.shape(), c.rng);
    T gx = layer.backward(probe, x, ctx, true);
    maybe_corrupt(layer.pw_weight.grad, c.corrupt);
    auto loss = [&] {
        LayerContext<double> scratch;
        return weighted_sum(layer.forward(x, scratch, Mode::train, c.rng), probe);
    };
    Checker chk{c.step};
    chk.against(x, gx, loss);
    chk.against(layer.dw_weight.value, layer.dw_weight.grad, loss);
    chk.against(layer.dw_bias.value, layer.dw_bias.grad, loss);
    chk.against(layer.pw_weight.value, layer.pw_weight.grad, loss);
    chk.against(layer.pw_bias.value, layer.pw_bias.grad, loss);
    return chk;
}

Checker check_relu(ItemContext& c) {
    T x = away_from_zero({2, 3, 4, 4}, c.rng);
    const T probe = random_tensor(x.shape(), c.rng);
    T gx = relu_backward(x, probe);
    maybe_corrupt(gx, c.corrupt);
    Checker chk{c.step};
    chk.against(x, gx, [&] { return weighted_sum(relu(x), probe); });
    return chk;
}

Checker check_maxpool(ItemContext& c) {
    T x = distinct_values({2, 2, 5, 6}, c.rng);
    const PoolResult<double> pooled = maxpool2(x);
    const T probe = random_tensor(pooled.output.shape(), c.rng);
    T gx = maxpool2_backward(x.shape(), pooled.argmax, probe);
    maybe_corrupt(gx, c.corrupt);
    Checker chk{c.step};
    chk.against(x, gx, [&] { return weighted_sum(maxpool2(x).output, probe); });
    return chk;
}

Checker check_gap(ItemContext& c) {
    T x = random_tensor({2, 3, 3, 4}, c.rng);
    const T probe = random_tensor({2, 3}, c.rng);
    T gx = global_avg_pool_backward(x.shape(), probe);
    maybe_corrupt(gx, c.corrupt);
    Checker chk{c.step};
    chk.against(x, gx, [&] { return weighted_sum(global_avg_pool(x), probe); });
    return chk;
}

Checker check_dense(ItemContext& c) {
    T x = random_tensor({3, 6}, c.rng);
    T w = random_tensor({4, 6}, c.rng);
    T b = random_tensor({4}, c.rng);
    const T probe = random_tensor({3, 4}, c.rng);
    T gx;
    T gw(w.shape());
    T gb(b.shape());
    dense_backward(x, w, probe, &gx, gw, gb);
    maybe_corrupt(gw, c.corrupt);
    auto loss = [&] { return weighted_sum(dense(x, w, b), probe); };
    Checker chk{c.step};
    chk.against(x, gx, loss);
    chk.against(w, gw, loss);
    chk.against(b, gb, loss);
    return chk;
}

Checker check_dropout(ItemContext& c) {
    T x = random_tensor({4, 8}, c.rng);
    const T probe = random_tensor(x.shape(), c.rng);
    const Rng mask_stream = Rng::derive(c.rng.next_u64(), 0);
    Rng first = mask_stream;
    const DropoutResult<double> result = dropout(x, 0.4, Mode::train, first);
    T gx = dropout_backward(result.mask, probe);
    maybe_corrupt(gx, c.corrupt);
    Checker chk{c.step};
    chk.against(x, gx, [&] {
        Rng replay = mask_stream;
        return weighted_sum(dropout(x, 0.4, Mode::train, replay).output, probe);
    });
    return chk;
}

Checker check_concat(ItemContext& c) {
    T a = random_tensor({2, 3}, c.rng);
    T b = random_tensor({2, 4}, c.rng);
    const T probe = random_tensor({2, 7}, c.rng);
    const std::vector<std::size_t> widths = {3, 4};
    std::vector<T> grads = concat_backward(probe, std::span<const std::size_t>(widths));
    maybe_corrupt(grads[0], c.corrupt);
    auto loss = [&] {
        const std::vector<T> parts = {a, b};
        return weighted_sum(concat(std::span<const T>(parts)), probe);
    };
    Checker chk{c.step};
    chk.against(a, grads[0], loss);
    chk.against(b, grads[1], loss);
    return chk;
}

Checker check_softmax(ItemContext& c) {
    T logits = random_tensor({4, 3}, c.rng, -2.0, 2.0);
    const std::vector<int> labels = {0, 2, 1, 2};
    const auto sce = softmax_cross_entropy(logits, std::span<const int>(labels));
    T g = softmax_cross_entropy_backward(sce.probs, std::span<const int>(labels));
    maybe_corrupt(g, c.corrupt);
    Checker chk{c.step};
    chk.against(logits, g, [&] { return softmax_cross_entropy(logits, std::span<const int>(labels)).loss; });
    return chk;
}

NetworkSpec tiny_hybrid() {
    const InputSize input{3, 8, 8};
    VggPlan vgg{{{4, 1}, {4, 1}}};
    MobilenetPlan mobile;
    mobile.stem_width = 4;
    mobile.blocks = {{4, 1}, {4, 2}, {3, 1}, {4, 1}, {4, 1}};
    return build_hybrid(build_vgg_branch(vgg, input), build_mobilenet_branch(mobile, input), HeadSpec{4, 0.25});
}

Checker check_hybrid(ItemContext& c) {
    Network<double> net = init_params<double>(tiny_hybrid(), c.rng.next_u64());
    for (Parameter<double>* p : net.parameters()) {
        // Non-zero biases exercise every bias gradient.
        if (p->value.rank() == 1) {
            p->value = random_tensor(p->value.shape(), c.rng, -0.1, 0.1);
        }
    }
    const T batch = random_tensor({2, 3, 8, 8}, c.rng);
    const std::vector<int> labels = {1, 0};
    const Rng mask_stream = Rng::derive(c.rng.next_u64(), 0);

    net.zero_grad();
    Rng first = mask_stream;
    ForwardPass<double> pass = net.forward(batch, Mode::train, first);
    net.backward(pass, labels);
    std::vector<T> analytic;
    for (Parameter<double>* p : net.parameters()) {
        analytic.push_back(p->grad);
    }
    auto loss = [&] {
        Rng replay = mask_stream;
        const ForwardPass<double> probe = net.forward(batch, Mode::train, replay);
        return softmax_cross_entropy(probe.logits, std::span<const int>(labels)).loss;
    };
    Checker chk{c.step};
    const auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        chk.against(params[i]->value, analytic[i], loss);
    }
    return chk;
}

}  // namespace

bool GradcheckReport::passed() const {
    return !items.empty() && std::all_of(items.begin(), items.end(), [](const GradcheckItem& i) { return i.passed; });
}

std::string GradcheckReport::format() const {
    std::string out;
    char line[160];
    for (const GradcheckItem& item : items) {
        std::snprintf(line, sizeof line, "%-22s max_rel_err=%.3e coords=%zu %s\n", item.name.c_str(),
                      item.max_relative_error, item.coordinates, item.passed ? "PASS" : "FAIL");
        out += line;
    }
    std::snprintf(line, sizeof line, "gradcheck: %s (threshold %.0e)\n", passed() ? "PASS" : "FAIL", threshold);
    out += line;
    return out;
}

GradcheckReport cmd_gradcheck(const GradcheckOptions& options) {
    const std::vector<std::pair<std::string, ItemFn>> items = {
        {"conv2d", [](ItemContext& c) { return check_conv(c, 3, 1, Padding::same, {2, 2, 5, 5}, 3); }},
        {"conv2d_strided", [](ItemContext& c) { return check_conv(c, 3, 2, Padding::valid, {2, 2, 7, 6}, 2); }},
        {"pointwise_conv", [](ItemContext& c) { return check_conv(c, 1, 1, Padding::valid, {2, 3, 4, 4}, 2); }},
        {"depthwise_conv", check_depthwise},
        {"depthwise_separable", check_separable},
        {"relu", check_relu},
        {"maxpool2", check_maxpool},
        {"global_avg_pool", check_gap},
        {"dense", check_dense},
        {"dropout", check_dropout},
        {"concat", check_concat},
        {"softmax_cross_entropy", check_softmax},
        {"hybrid_end_to_end", check_hybrid},
    };
    GradcheckReport report;
    report.threshold = options.threshold;
    for (std::size_t i = 0; i < items.size(); ++i) {
        Rng rng = Rng::derive(options.seed, 0x6c4ec, i);
        ItemContext ctx{rng, options.step, options.corrupt == items[i].first};
        const Checker chk = items[i].second(ctx);
        report.items.push_back({items[i].first, chk.worst, chk.coordinates,
                                std::isfinite(chk.worst) && chk.worst <= options.threshold});
    }
    return report;
}

}  // namespace fusionnet
