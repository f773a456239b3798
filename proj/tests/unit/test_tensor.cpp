#include <cmath>

#include "doctest.h"
#include "fusionnet/errors.hpp"
#include "fusionnet/tensor.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace fusionnet;
using T = Tensor<double>;

TEST_CASE("tensor size matches shape product") {
    T t({2, 3, 4});
    CHECK(t.size() == 24);
    CHECK(t.rank() == 3);
    CHECK(shape_size(t.shape()) == t.size());
    CHECK_THROWS_AS(T({2, 2}, std::vector<double>(3)), Error);
}

TEST_CASE("matmul examples") {
    const T a = T::from({{1, 2}, {3, 4}});
    CHECK(matmul(a, T::from({{1, 0}, {0, 1}})) == a);
    CHECK(matmul(a, T::zeros({2, 2})) == T::zeros({2, 2}));
    const T b = T::from({{5, 6}, {7, 8}});
    const auto expect = oracle::matmul({1, 2, 3, 4}, {5, 6, 7, 8}, 2, 2, 2);
    const T c = matmul(a, b);
    REQUIRE(c.shape() == Shape{2, 2});
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(c[i] == expect[i]);
    }
    CHECK(c == T::from({{19, 22}, {43, 50}}));
}

TEST_CASE("matmul shape mismatch is a dimension error") {
    try {
        matmul(T::zeros({2, 3}), T::zeros({2, 3}));
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::dimension);
        CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("matmul matches the triple-loop oracle on random shapes") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng.below(9), k = 1 + rng.below(9), n = 1 + rng.below(9);
        const T a = testutil::random_tensor({m, k}, rng);
        const T b = testutil::random_tensor({k, n}, rng);
        const auto ref = oracle::matmul({a.values().begin(), a.values().end()},
                                        {b.values().begin(), b.values().end()}, m, k, n);
        const T c = matmul(a, b);
        for (std::size_t i = 0; i < ref.size(); ++i) {
            CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("matmul is associative within 1e-6 relative") {
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        const T a = testutil::random_tensor({3, 4}, rng);
        const T b = testutil::random_tensor({4, 5}, rng);
        const T c = testutil::random_tensor({5, 2}, rng);
        CHECK(max_relative_error(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) < 1e-6);
    }
}

TEST_CASE("elementwise examples and properties") {
    CHECK(add(T::from({1, 2}), T::from({0, 0})) == T::from({1, 2}));
    CHECK(mul(T::from({1, 2}), T::from({3, 4})) == T::from({3, 8}));
    CHECK(scale(T::from({2, 4}), 0.5) == T::from({1, 2}));
    CHECK(sub(T::from({3, 4}), T::from({1, 1})) == T::from({2, 3}));
    Rng rng(13);
    const T a = testutil::random_tensor({4, 3}, rng);
    const T b = testutil::random_tensor({4, 3}, rng);
    CHECK(add(a, b) == add(b, a));
    CHECK(mul(a, b) == mul(b, a));
    CHECK(scale(a, 1.0) == a);
    CHECK_THROWS_AS(add(T::zeros({2}), T::zeros({3})), Error);
}

TEST_CASE("finite_diff_grad examples") {
    const std::function<double(const T&)> sq = [](const T& x) {
        double s = 0;
        for (double v : x.values()) s += v * v;
        return s;
    };
    const T g = finite_diff_grad(sq, T::from({1, 2}), 1e-5);
    CHECK(max_relative_error(g, T::from({2, 4})) < 1e-6);

    const std::function<double(const T&)> constant = [](const T&) { return 3.0; };
    const T z = finite_diff_grad(constant, T::from({1, 2, 3}), 1e-5);
    for (double v : z.values()) CHECK(v == 0.0);

    const std::function<double(const T&)> prod = [](const T& x) { return x[0] * x[1]; };
    CHECK(max_relative_error(finite_diff_grad(prod, T::from({3, 5}), 1e-5), T::from({5, 3})) < 1e-6);
}

TEST_CASE("finite_diff_grad of sum of squares matches 2x on random points") {
    const std::function<double(const T&)> sq = [](const T& x) {
        double s = 0;
        for (double v : x.values()) s += v * v;
        return s;
    };
    Rng rng(14);
    const T x = testutil::random_tensor({10}, rng);
    CHECK(max_relative_error(finite_diff_grad(sq, x, 1e-5), scale(x, 2.0)) < 1e-6);
}

TEST_CASE("finite_diff_grad raises a numeric error on non-finite evaluations") {
    const std::function<double(const T&)> bad = [](const T& x) { return std::log(x[0]); };
    try {
        finite_diff_grad(bad, T::from({0.0}), 1e-5);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::numeric);
    }
}

TEST_CASE("gemm honours transposes, alpha and beta") {
    Rng rng(15);
    const std::size_t m = 3, n = 4, k = 5;
    const T a = testutil::random_tensor({k, m}, rng);  // stored transposed
    const T b = testutil::random_tensor({n, k}, rng);  // stored transposed
    T c = testutil::random_tensor({m, n}, rng);
    const T c0 = c;
    kernels::gemm<double>(true, true, m, n, k, 2.0, a.data(), b.data(), 0.5, c.data());
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[j * k + p];
            CHECK(c[i * n + j] == doctest::Approx(2 * s + 0.5 * c0[i * n + j]).epsilon(1e-12));
        }
    }
}

TEST_CASE("parameter gradient mirrors the value shape") {
    Parameter<float> p("w", Tensor<float>({3, 2}, 1.5f));
    CHECK(p.grad.shape() == p.value.shape());
    p.grad.fill(2.0f);
    p.zero_grad();
    for (float v : p.grad.values()) CHECK(v == 0.0f);
}
