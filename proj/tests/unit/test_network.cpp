#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "fusionnet/errors.hpp"
#include "fusionnet/network.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace fusionnet;
using T = Tensor<double>;

namespace {

NetworkSpec toy_hybrid(InputSize in = {}) {
    return build_hybrid(build_vgg_branch(VggPlan::toy(), in), build_mobilenet_branch(MobilenetPlan::toy(), in));
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

TEST_CASE("toy VGG branch ends in an 8x8x64 map with a 64-long tap") {
    const NetworkSpec vgg = build_vgg_branch(VggPlan::toy());
    const ShapeReport r = propagate_shapes(vgg);
    CHECK(r.layer_outputs[0].back() == Shape{64, 8, 8});
    CHECK(r.tap_lengths == std::vector<std::size_t>{64});

    const NetworkSpec minimal = build_vgg_branch(VggPlan{{{8, 1}}});
    REQUIRE(minimal.branches[0].layers.size() == 3);
    CHECK(minimal.branches[0].layers[0].kind == LayerKind::conv);
    CHECK(minimal.branches[0].layers[2].kind == LayerKind::maxpool);
    CHECK(propagate_shapes(minimal).tap_lengths == std::vector<std::size_t>{8});
}

TEST_CASE("VGG plan too deep for the input is rejected") {
    VggPlan deep;
    deep.stages.assign(8, VggStage{4, 1});
    try {
        build_vgg_branch(deep, {3, 16, 16});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
    }
}

TEST_CASE("toy MobileNet branch taps and fused length") {
    const ShapeReport r = propagate_shapes(build_mobilenet_branch(MobilenetPlan::toy()));
    CHECK(r.tap_lengths == std::vector<std::size_t>{16, 32, 32, 64, 64});
    CHECK(r.fused_length == 208);

    MobilenetPlan eights = MobilenetPlan::toy();
    eights.stem_width = 8;
    for (auto& b : eights.blocks) b.width = 8;
    const ShapeReport e = propagate_shapes(build_mobilenet_branch(eights));
    CHECK(e.tap_lengths == std::vector<std::size_t>(5, 8));
    CHECK(e.fused_length == 40);

    MobilenetPlan four = MobilenetPlan::toy();
    four.blocks.resize(4);
    CHECK_THROWS_AS(build_mobilenet_branch(four), Error);
    MobilenetPlan bad_taps = MobilenetPlan::toy();
    bad_taps.tap_blocks = {0, 1, 2, 3};
    CHECK_THROWS_AS(build_mobilenet_branch(bad_taps), Error);
}

TEST_CASE("toy hybrid fuses 272 features and its head matches the parameter-count oracle") {
    const NetworkSpec spec = toy_hybrid();
    const ShapeReport r = propagate_shapes(spec);
    CHECK(r.fused_length == 64 + 208);
    CHECK(head_parameter_count(spec) == oracle::head_params(272, 256, 2));
    CHECK(head_parameter_count(spec) == 70402);
    const Network<double> net = init_params<double>(spec, 1);
    std::size_t counted = 0;
    for (const auto* p : net.parameters()) counted += p->value.size();
    CHECK(counted == parameter_count(spec));
}

TEST_CASE("hybrid rejects mismatched branch inputs") {
    CHECK_THROWS_AS(build_hybrid(build_vgg_branch(VggPlan::toy(), {3, 64, 64}),
                                 build_mobilenet_branch(MobilenetPlan::toy(), {3, 32, 32})),
                    Error);
}

TEST_CASE("full-scale specs shape-check on 380x380 inputs") {
    const InputSize in{3, 380, 380};
    const NetworkSpec vgg = build_vgg_branch(VggPlan::full_scale(), in);
    std::size_t convs = 0;
    for (const auto& l : vgg.branches[0].layers) convs += l.kind == LayerKind::conv ? 1 : 0;
    CHECK(convs == 13);
    CHECK(propagate_shapes(vgg).tap_lengths == std::vector<std::size_t>{512});
    const NetworkSpec mobile = build_mobilenet_branch(MobilenetPlan::full_scale(), in);
    std::size_t blocks = 0;
    for (const auto& l : mobile.branches[0].layers) blocks += l.kind == LayerKind::depthwise_separable ? 1 : 0;
    CHECK(blocks == 13);
    const ShapeReport r = propagate_shapes(build_hybrid(vgg, mobile));
    CHECK(r.tap_lengths.size() == 6);
    CHECK(r.fused_length == std::accumulate(r.tap_lengths.begin(), r.tap_lengths.end(), std::size_t{0}));
}

TEST_CASE("declared tap lengths equal executed tap lengths on random specs") {
    Rng rng(21);
    for (int trial = 0; trial < 8; ++trial) {
        VggPlan vp;
        const std::size_t stages = 1 + rng.below(3);
        for (std::size_t s = 0; s < stages; ++s) vp.stages.push_back({1 + rng.below(4), 1 + rng.below(2)});
        MobilenetPlan mp;
        mp.stem_width = 1 + rng.below(4);
        const std::size_t blocks = 5 + rng.below(3);
        for (std::size_t b = 0; b < blocks; ++b) mp.blocks.push_back({1 + rng.below(4), 1 + rng.below(2)});
        const std::size_t size = 8 + rng.below(13);
        const InputSize in{3, size, size + rng.below(5)};
        const NetworkSpec spec = build_hybrid(build_vgg_branch(vp, in), build_mobilenet_branch(mp, in),
                                              HeadSpec{1 + rng.below(5), 0.25});
        const ShapeReport r = propagate_shapes(spec);
        const Network<double> net = init_params<double>(spec, trial);
        Rng drop(0);
        const auto pass = net.forward(testutil::random_tensor({2, 3, in.height, in.width}, rng), Mode::eval, drop);
        REQUIRE(pass.taps.size() == r.tap_lengths.size());
        for (std::size_t t = 0; t < pass.taps.size(); ++t) CHECK(pass.taps[t].shape() == Shape{2, r.tap_lengths[t]});
        CHECK(pass.fused.shape() == Shape{2, r.fused_length});
        CHECK(pass.logits.shape() == Shape{2, 2});
    }
}

TEST_CASE("initialization is deterministic and He-scaled") {
    const NetworkSpec spec = toy_hybrid();
    const Network<float> a = init_params<float>(spec, 7);
    const Network<float> b = init_params<float>(spec, 7);
    const Network<float> c = init_params<float>(spec, 8);
    const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->value == pb[i]->value);
        any_diff = any_diff || !(pa[i]->value == pc[i]->value);
    }
    CHECK(any_diff);

    const Network<double> net = init_params<double>(spec, 3);
    for (const auto* p : net.parameters()) {
        const Shape& s = p->value.shape();
        if (s.size() < 2) {
            for (double v : p->value.values()) CHECK(v == 0.0);
            continue;
        }
        if (p->value.size() < 4000) continue;
        const std::size_t fan_in = p->value.size() / s[0];
        double sq = 0;
        for (double v : p->value.values()) sq += v * v;
        const double std_dev = std::sqrt(sq / double(p->value.size()));
        CHECK(std_dev == doctest::Approx(std::sqrt(2.0 / double(fan_in))).epsilon(0.05));
    }
}

TEST_CASE("parameter names are unique") {
    Network<double> net = init_params<double>(toy_hybrid(), 1);
    std::set<std::string> names;
    for (auto* p : net.parameters()) {
        CHECK(names.insert(p->name).second);
        CHECK(p->grad.shape() == p->value.shape());
    }
}

TEST_CASE("zero input through a zero network yields the head biases") {
    const NetworkSpec spec = toy_hybrid({3, 16, 16});
    Network<double> net(spec);
    net.parameter("head.output.bias").value = T::from({0.25, -1.5});
    Rng rng(0);
    const auto pass = net.forward(T::zeros({3, 3, 16, 16}), Mode::eval, rng);
    for (std::size_t b = 0; b < 3; ++b) {
        CHECK(pass.logits[b * 2] == 0.25);
        CHECK(pass.logits[b * 2 + 1] == -1.5);
    }
}

TEST_CASE("duplicated samples keep the single-sample loss") {
    const NetworkSpec spec = toy_hybrid({3, 16, 16});
    Network<double> net = init_params<double>(spec, 4);
    Rng rng(5);
    const T x = testutil::random_tensor({1, 3, 16, 16}, rng, 0, 1);
    T xx({2, 3, 16, 16});
    std::copy(x.values().begin(), x.values().end(), xx.values().begin());
    std::copy(x.values().begin(), x.values().end(), xx.values().begin() + x.size());
    Rng d1(0), d2(0);
    auto single = net.forward(x, Mode::eval, d1);
    auto twice = net.forward(xx, Mode::eval, d2);
    const std::vector<int> one{1}, two{1, 1};
    const double l1 = net.backward(single, one);
    const double l2 = net.backward(twice, two);
    CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
}

TEST_CASE("saturated correct logits leave near-zero gradients") {
    const NetworkSpec spec = toy_hybrid({3, 16, 16});
    Network<double> net(spec);
    net.parameter("head.output.bias").value = T::from({40.0, -40.0});
    Rng rng(0);
    auto pass = net.forward(T({2, 3, 16, 16}, 0.5), Mode::train, rng);
    const std::vector<int> labels{0, 0};
    net.zero_grad();
    CHECK(net.backward(pass, labels) < 1e-12);
    for (const auto* p : net.parameters()) {
        for (double g : p->grad.values()) CHECK(std::fabs(g) < 1e-12);
    }
}

TEST_CASE("labels outside the class range are a data error") {
    Network<double> net = init_params<double>(toy_hybrid({3, 16, 16}), 1);
    Rng rng(0);
    auto pass = net.forward(T::zeros({1, 3, 16, 16}), Mode::eval, rng);
    const std::vector<int> bad{2};
    try {
        net.backward(pass, bad);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::data);
    }
}

TEST_CASE("input shape mismatch is a dimension error") {
    Network<double> net = init_params<double>(toy_hybrid({3, 16, 16}), 1);
    Rng rng(0);
    try {
        net.forward(T::zeros({1, 3, 15, 16}), Mode::eval, rng);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::dimension);
    }
}

TEST_CASE("with MobileNet taps zeroed the logits depend on the VGG branch only") {
    const NetworkSpec spec = toy_hybrid({3, 16, 16});
    Network<double> net = init_params<double>(spec, 9);
    const std::size_t vgg_len = propagate_shapes(spec).tap_lengths[0];
    Rng rng(3);
    const T x = testutil::random_tensor({2, 3, 16, 16}, rng, 0, 1);
    const auto masked_logits = [&]() {
        Rng d(0);
        auto pass = net.forward(x, Mode::eval, d);
        T fused = pass.fused;
        const std::size_t width = fused.dim(1);
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t j = vgg_len; j < width; ++j) fused[b * width + j] = 0.0;
        return std::make_pair(net.head_forward(fused, Mode::eval, d), pass.taps[0]);
    };
    const auto [before, vgg_before] = masked_logits();
    for (auto* p : net.parameters()) {
        if (starts_with(p->name, "mobile.")) {
            for (auto& v : p->value.values()) v += rng.uniform(-0.5, 0.5);
        }
    }
    const auto [after, vgg_after] = masked_logits();
    CHECK(before == after);
    CHECK(vgg_before == vgg_after);

    for (auto* p : net.parameters()) {
        if (starts_with(p->name, "vgg.") && p->value.rank() == 4) {
            for (auto& v : p->value.values()) v *= 1.5;
        }
    }
    const auto [changed, unused] = masked_logits();
    CHECK_FALSE(changed == before);
}

TEST_CASE("plain baselines feed their final tap straight to the classifier") {
    const NetworkSpec plain = plain_network(build_mobilenet_branch(MobilenetPlan::toy()));
    CHECK_FALSE(plain.head.has_value());
    CHECK(propagate_shapes(plain).tap_lengths == std::vector<std::size_t>{64});
    CHECK(head_parameter_count(plain) == 64 * 2 + 2);
}

TEST_CASE("train-mode forward is reproducible from the dropout stream") {
    Network<double> net = init_params<double>(toy_hybrid({3, 16, 16}), 2);
    Rng data(1);
    const T x = testutil::random_tensor({4, 3, 16, 16}, data, 0, 1);
    Rng a(42), b(42);
    CHECK(net.forward(x, Mode::train, a).logits == net.forward(x, Mode::train, b).logits);
}
