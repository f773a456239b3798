#include <cmath>

#include "doctest.h"
#include "fusionnet/errors.hpp"
#include "fusionnet/optim.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace fusionnet;
using T = Tensor<double>;

namespace {

std::vector<double> run(OptimizerKind kind, double w0, const std::vector<double>& grads) {
    Optimizer<double> opt(OptimizerConfig::defaults(kind));
    Parameter<double> p("w", T::from({w0}));
    std::vector<double> out;
    for (double g : grads) {
        p.grad[0] = g;
        opt.step({&p});
        out.push_back(p.value[0]);
    }
    return out;
}

}  // namespace

TEST_CASE("defaults carry the recipe hyperparameters") {
    const auto sgd = OptimizerConfig::defaults(OptimizerKind::sgd);
    CHECK(sgd.lr == 1e-4);
    CHECK(sgd.momentum == 0.9);
    const auto adam = OptimizerConfig::defaults(OptimizerKind::adam);
    CHECK(adam.lr == 1e-3);
    CHECK(adam.beta1 == 0.7);
    CHECK(adam.beta2 == 0.999);
    CHECK(adam.epsilon == 1e-7);
    const auto rms = OptimizerConfig::defaults(OptimizerKind::rmsprop);
    CHECK(rms.lr == 1e-4);
    CHECK(rms.rho == 0.8);
    CHECK(rms.epsilon == 1e-7);
}

TEST_CASE("invalid optimizer configs are rejected") {
    OptimizerConfig c;
    c.lr = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.beta1 = 1.0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.epsilon = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK_THROWS_AS(parse_optimizer_kind("lbfgs"), Error);
}

TEST_CASE("sgd hand-stepped examples") {
    OptimizerConfig c = OptimizerConfig::defaults(OptimizerKind::sgd);
    T w = T::from({1.0}), v = T::zeros({1});
    sgd_momentum_step(w, T::from({0.5}), v, c);
    CHECK(v[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(w[0] == doctest::Approx(0.99995).epsilon(1e-15));

    T w2 = T::from({1.0}), v2 = T::zeros({1});
    sgd_momentum_step(w2, T::from({1.0}), v2, c);
    sgd_momentum_step(w2, T::from({1.0}), v2, c);
    CHECK(v2[0] == doctest::Approx(1.9).epsilon(1e-15));
    CHECK(w2[0] == doctest::Approx(1 - 1e-4 * 2.9).epsilon(1e-15));
}

TEST_CASE("adam first step example") {
    OptimizerConfig c = OptimizerConfig::defaults(OptimizerKind::adam);
    T w = T::from({1.0}), m = T::zeros({1}), v = T::zeros({1});
    adam_step(w, T::from({1.0}), m, v, 1, c);
    CHECK(std::fabs(w[0] - 0.999) < 1e-9);
}

TEST_CASE("rmsprop first step example and squared-gradient convergence") {
    OptimizerConfig c = OptimizerConfig::defaults(OptimizerKind::rmsprop);
    T w = T::from({1.0}), s = T::zeros({1});
    rmsprop_step(w, T::from({1.0}), s, c);
    CHECK(s[0] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(w[0] == doctest::Approx(1.0 - 1e-4 / (std::sqrt(0.2) + 1e-7)).epsilon(1e-15));
    CHECK(w[0] == doctest::Approx(0.99977640).epsilon(1e-8));

    const double g = 0.7;
    T w2 = T::from({0.0}), s2 = T::zeros({1});
    double prev_gap = g * g;
    for (int i = 1; i <= 50; ++i) {
        rmsprop_step(w2, T::from({g}), s2, c);
        const double gap = g * g - s2[0];
        CHECK(gap == doctest::Approx(prev_gap * 0.8).epsilon(1e-9));
        prev_gap = gap;
    }
}

TEST_CASE("zero gradients leave parameters bitwise unchanged") {
    Rng rng(3);
    for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam, OptimizerKind::rmsprop}) {
        Optimizer<double> opt(OptimizerConfig::defaults(kind));
        Parameter<double> p("w", testutil::random_tensor({6}, rng));
        const T before = p.value;
        opt.step({&p});
        CHECK(p.value == before);
    }
    // RMSProp divides a zero gradient by a warm denominator: still zero.
    Optimizer<double> rms(OptimizerConfig::defaults(OptimizerKind::rmsprop));
    Parameter<double> p("w", testutil::random_tensor({6}, rng));
    p.grad.fill(0.3);
    rms.step({&p});
    p.zero_grad();
    const T warm = p.value;
    rms.step({&p});
    CHECK(p.value == warm);
}

TEST_CASE("twenty-step scalar trajectories match the oracle") {
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> grads;
        for (int i = 0; i < 20; ++i) grads.push_back(rng.uniform(-3, 3));
        const double w0 = rng.uniform(-1, 1);
        const auto sgd = run(OptimizerKind::sgd, w0, grads);
        const auto adam = run(OptimizerKind::adam, w0, grads);
        const auto rms = run(OptimizerKind::rmsprop, w0, grads);
        const auto sgd_ref = oracle::sgd_trajectory(w0, grads, 1e-4, 0.9);
        const auto adam_ref = oracle::adam_trajectory(w0, grads, 1e-3, 0.7, 0.999, 1e-7);
        const auto rms_ref = oracle::rmsprop_trajectory(w0, grads, 1e-4, 0.8, 1e-7);
        for (std::size_t i = 0; i < 20; ++i) {
            CHECK(std::fabs(sgd[i] - sgd_ref[i]) <= 1e-10);
            CHECK(std::fabs(adam[i] - adam_ref[i]) <= 1e-10);
            CHECK(std::fabs(rms[i] - rms_ref[i]) <= 1e-10);
        }
    }
}

TEST_CASE("adam first step is scale-invariant") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const double g = rng.uniform(0.01, 2.0) * (trial % 2 ? 1 : -1);
        const double k = rng.uniform(0.1, 100.0);
        const auto a = run(OptimizerKind::adam, 0.0, {g});
        const auto b = run(OptimizerKind::adam, 0.0, {g * k});
        CHECK(std::fabs(a[0] - b[0]) <= 1e-3 * std::fabs(a[0]));
    }
}

TEST_CASE("all optimizers descend a convex quadratic after burn-in") {
    for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam, OptimizerKind::rmsprop}) {
        Optimizer<double> opt(OptimizerConfig::defaults(kind));
        Parameter<double> p("w", T::from({1.0, -2.0, 0.5}));
        double prev = 1e300;
        for (int step = 0; step < 200; ++step) {
            p.grad = p.value;  // grad of 0.5 |w|^2
            opt.step({&p});
            double f = 0;
            for (double v : p.value.values()) f += 0.5 * v * v;
            if (step >= 5) CHECK(f < prev);
            prev = f;
        }
    }
}

TEST_CASE("optimizer buffers mirror parameter shapes and skip frozen parameters") {
    Optimizer<float> opt(OptimizerConfig::defaults(OptimizerKind::adam));
    Parameter<float> a("a", Tensor<float>({2, 3}, 1.0f));
    Parameter<float> b("b", Tensor<float>({4}, 1.0f));
    b.trainable = false;
    a.grad.fill(1.0f);
    b.grad.fill(1.0f);
    opt.step({&a, &b});
    CHECK(opt.state().step == 1);
    CHECK(opt.state().first[0].shape() == a.value.shape());
    CHECK(opt.state().second[0].shape() == a.value.shape());
    for (float v : b.value.values()) CHECK(v == 1.0f);
}
