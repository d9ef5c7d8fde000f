#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cgaug/autodiff.hpp"
#include "cgaug/common.hpp"
#include "cgaug/tensor.hpp"

using namespace cgaug;

TEST_CASE("elementwise forward basics") {
    Tape t;
    Var a = t.leaf(Tensor({2}, {0.0, 1.0}));
    Tensor e = t.value(exp(a));
    CHECK(e[0] == doctest::Approx(1.0));
    CHECK(e[1] == doctest::Approx(std::exp(1.0)));

    Var z = t.leaf(Tensor::scalar(0.0));
    CHECK(t.value(sigmoid(z)).item() == doctest::Approx(0.5));

    Var x = t.leaf(Tensor({2}, {1.0, 2.0}));
    Var y = t.leaf(Tensor({2}, {3.0, 4.0}));
    Tensor s = t.value(x + y);
    CHECK(s[0] == 4.0);
    CHECK(s[1] == 6.0);

    CHECK(t.value(tanh(t.leaf(Tensor::scalar(0.0)))).item() == 0.0);
    CHECK(t.value(square(t.leaf(Tensor::scalar(-3.0)))).item() == 9.0);
    CHECK(t.value(neg(t.leaf(Tensor::scalar(2.5)))).item() == -2.5);
}

TEST_CASE("elementwise domain errors") {
    Tape t;
    Var a = t.leaf(Tensor({2}, {1.0, -1.0}));
    CHECK_THROWS_AS((void)log(a), NumericDomainError);
    Var b = t.leaf(Tensor({2}, {1.0, 0.0}));
    Var c = t.leaf(Tensor({2}, {1.0, 1.0}));
    CHECK_THROWS_AS((void)divide(c, b), NumericDomainError);
    Var d = t.leaf(Tensor({2, 3}));
    Var e = t.leaf(Tensor({4}));
    CHECK_THROWS_AS((void)add(d, e), ShapeError);
}

TEST_CASE("matmul identity, zeros and hand-computed product") {
    Tape t;
    Var a = t.leaf(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
    Var eye = t.leaf(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}));
    Tensor ia = t.value(matmul(eye, a));
    for (std::size_t i = 0; i < 4; ++i) CHECK(ia[i] == t.value(a)[i]);

    Var zeros = t.leaf(Tensor({2, 2}));
    Tensor za = t.value(matmul(zeros, a));
    for (std::size_t i = 0; i < 4; ++i) CHECK(za[i] == 0.0);

    // hand multiply: [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
    Var b = t.leaf(Tensor({2, 2}, {5.0, 6.0, 7.0, 8.0}));
    Tensor ab = t.value(matmul(a, b));
    CHECK(ab[0] == 19.0);
    CHECK(ab[1] == 22.0);
    CHECK(ab[2] == 43.0);
    CHECK(ab[3] == 50.0);

    Var bad = t.leaf(Tensor({3, 2}));
    CHECK_THROWS_AS((void)matmul(a, bad), ShapeError);
}

TEST_CASE("reductions") {
    Tape t;
    Var a = t.leaf(Tensor({3}, {1.0, 2.0, 3.0}));
    CHECK(t.value(mean(a)).item() == doctest::Approx(2.0));

    Var ones = t.leaf(Tensor::full({2, 3}, 1.0));
    Tensor s0 = t.value(sum(ones, 0));
    CHECK(s0.shape() == std::vector<std::size_t>{3});
    for (std::size_t i = 0; i < 3; ++i) CHECK(s0[i] == 2.0);
    Tensor s1 = t.value(sum(ones, 1, true));
    CHECK(s1.shape() == std::vector<std::size_t>{2, 1});
    for (std::size_t i = 0; i < 2; ++i) CHECK(s1[i] == 3.0);
}

TEST_CASE("gradient of mean is 1/n broadcast") {
    Tape t;
    Var a = t.leaf(Tensor({4}, {1.0, 2.0, 3.0, 4.0}), true);
    t.backward(mean(a));
    const Tensor& g = t.grad(a);
    for (std::size_t i = 0; i < 4; ++i) CHECK(g[i] == doctest::Approx(0.25));
}

TEST_CASE("softmax and cross entropy") {
    Tape t;
    Var a = t.leaf(Tensor({3}, {0.0, 0.0, 0.0}));
    Tensor p = t.value(softmax(a));
    for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(1.0 / 3.0));

    // uniform logits over 4 classes -> loss ln 4 for any target
    Var logits = t.leaf(Tensor({1, 4}));
    for (int target = 0; target < 4; ++target) {
        Var l = cross_entropy(logits, {target});
        CHECK(t.value(l).item() == doctest::Approx(std::log(4.0)));
    }
    CHECK_THROWS_AS((void)cross_entropy(logits, {7}), std::out_of_range);
}

TEST_CASE("softmax rows sum to 1") {
    Rng rng(7);
    Tensor x({5, 9});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.gauss(0.0, 3.0);
    Tape t;
    Tensor p = t.value(softmax(t.leaf(x)));
    for (std::size_t i = 0; i < 5; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 9; ++j) s += p.at2(i, j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("backward simple cases") {
    {
        Tape t;
        Var x = t.leaf(Tensor::scalar(3.0), true);
        t.backward(square(x));
        CHECK(t.grad(x).item() == doctest::Approx(6.0));
    }
    {
        Tape t;
        Var x = t.leaf(Tensor({3}, {1.0, 2.0, 3.0}), true);
        Var y = t.leaf(Tensor({3}, {4.0, 5.0, 6.0}), true);
        t.backward(sum(x * y));
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(t.grad(x)[i] == t.value(y)[i]);
            CHECK(t.grad(y)[i] == t.value(x)[i]);
        }
    }
}

TEST_CASE("backward requires scalar loss and accumulates on repeat") {
    Tape t;
    Var x = t.leaf(Tensor({2}, {1.0, 2.0}), true);
    Var v = x * x;
    CHECK_THROWS_AS(t.backward(v), ShapeError);
    Var loss = sum(v);
    t.backward(loss);
    t.backward(loss);
    CHECK(t.grad(x)[0] == doctest::Approx(4.0));  // 2*2x accumulated twice
    CHECK(t.grad(x)[1] == doctest::Approx(8.0));
}

TEST_CASE("broadcast backward sums over broadcast dims") {
    Tape t;
    Var a = t.leaf(Tensor({3, 2}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0}), true);
    Var b = t.leaf(Tensor({1, 2}, {10.0, 20.0}), true);
    t.backward(sum(a + b));
    CHECK(t.grad(b)[0] == doctest::Approx(3.0));
    CHECK(t.grad(b)[1] == doctest::Approx(3.0));

    Tape t2;
    Var c = t2.leaf(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}), true);
    Var d = t2.leaf(Tensor({2, 1}, {2.0, 3.0}), true);
    t2.backward(sum(c * d));
    CHECK(t2.grad(d)[0] == doctest::Approx(1.0 + 2.0));
    CHECK(t2.grad(d)[1] == doctest::Approx(3.0 + 4.0));
    CHECK(t2.grad(c)[0] == doctest::Approx(2.0));
    CHECK(t2.grad(c)[3] == doctest::Approx(3.0));
}

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double sd = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.gauss(0.0, sd);
    return t;
}

}  // namespace

TEST_CASE("grad_check: linear, exp/log chain, softmax+ce") {
    Rng rng(11);
    {
        // linear function: error around machine epsilon
        auto fn = [](Tape&, std::vector<Var>& v) { return sum(scale(v[0], 3.0)); };
        double err = grad_check(fn, {random_tensor({4}, rng)});
        CHECK(err < 1e-9);
    }
    {
        // composed exp/log chain
        auto fn = [](Tape&, std::vector<Var>& v) {
            return sum(log(add_const(exp(v[0]), 1.5)));
        };
        double err = grad_check(fn, {random_tensor({3, 3}, rng, 0.5)});
        CHECK(err < 1e-6);
    }
    {
        // cross entropy gradient vs central differences, eps = 1e-5
        auto fn = [](Tape&, std::vector<Var>& v) {
            return cross_entropy(v[0], {1, 0, 2});
        };
        double err = grad_check(fn, {random_tensor({3, 4}, rng)}, 1e-5);
        CHECK(err < 1e-6);
    }
    {
        auto fn = [](Tape&, std::vector<Var>& v) { return sum(square(softmax(v[0]))); };
        double err = grad_check(fn, {random_tensor({2, 5}, rng)});
        CHECK(err < 1e-6);
    }
}

TEST_CASE("grad_check: random 3-layer MLP loss under 1e-4") {
    Rng rng(23);
    Tensor x = random_tensor({2, 5}, rng);
    Tensor w1 = random_tensor({5, 7}, rng, 0.5);
    Tensor b1 = random_tensor({1, 7}, rng, 0.1);
    Tensor w2 = random_tensor({7, 6}, rng, 0.5);
    Tensor b2 = random_tensor({1, 6}, rng, 0.1);
    Tensor w3 = random_tensor({6, 3}, rng, 0.5);
    auto fn = [&](Tape& t, std::vector<Var>& v) {
        Var h1 = tanh(matmul(v[0], v[1]) + v[2]);
        Var h2 = sigmoid(matmul(h1, v[3]) + v[4]);
        Var logits = matmul(h2, v[5]);
        return cross_entropy(logits, {2, 0});
    };
    double err = grad_check(fn, {x, w1, b1, w2, b2, w3});
    CHECK(err <= 1e-4);
}

TEST_CASE("grad_check: structural ops") {
    Rng rng(31);
    {
        auto fn = [](Tape&, std::vector<Var>& v) {
            Var cat = concat_rows({v[0], v[1]});
            return sum(square(slice_rows(cat, 1, 3)));
        };
        double err = grad_check(fn, {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
        CHECK(err < 1e-6);
    }
    {
        auto fn = [](Tape&, std::vector<Var>& v) {
            Var cat = concat_cols({v[0], v[1]});
            return sum(square(slice_cols(cat, 1, 4)));
        };
        double err = grad_check(fn, {random_tensor({3, 2}, rng), random_tensor({3, 3}, rng)});
        CHECK(err < 1e-6);
    }
    {
        auto fn = [](Tape&, std::vector<Var>& v) {
            Var g = gather_rows(v[0], {2, 0, 2});  // repeated row: grads must add
            return sum(square(g));
        };
        double err = grad_check(fn, {random_tensor({4, 3}, rng)});
        CHECK(err < 1e-6);
    }
    {
        auto fn = [](Tape&, std::vector<Var>& v) {
            return sum(square(repeat_rows(v[0], 4)));
        };
        double err = grad_check(fn, {random_tensor({1, 3}, rng)});
        CHECK(err < 1e-6);
    }
    {
        auto fn = [](Tape&, std::vector<Var>& v) {
            return sum(square(matmul(transpose(v[0]), v[1])));
        };
        double err = grad_check(fn, {random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)});
        CHECK(err < 1e-6);
    }
    {
        auto fn = [](Tape&, std::vector<Var>& v) {
            Tensor targets({2, 3}, {1.0, 0.0, 1.0, 0.0, 1.0, 0.0});
            return bce_with_logits(v[0], targets);
        };
        double err = grad_check(fn, {random_tensor({2, 3}, rng)});
        CHECK(err < 1e-6);
    }
    {
        auto fn = [](Tape&, std::vector<Var>& v) {
            return sum(divide(v[0], add_const(square(v[1]), 1.0)));
        };
        double err = grad_check(fn, {random_tensor({2, 2}, rng), random_tensor({2, 2}, rng)});
        CHECK(err < 1e-5);
    }
    {
        auto fn = [](Tape&, std::vector<Var>& v) {
            return sum(mul(powc(add_const(square(v[0]), 0.5), -0.5), v[0]));
        };
        double err = grad_check(fn, {random_tensor({3, 3}, rng)});
        CHECK(err < 1e-5);
    }
    {
        auto fn = [](Tape&, std::vector<Var>& v) {
            return sum(square(mean(v[0], 0, true))) + sum(square(sum(v[0], 1, true)));
        };
        double err = grad_check(fn, {random_tensor({3, 4}, rng)});
        CHECK(err < 1e-6);
    }
}

TEST_CASE("tape replay is bit-identical") {
    Rng rng(5);
    Tensor x = random_tensor({4, 4}, rng);
    Tensor w = random_tensor({4, 4}, rng);
    auto run = [&]() {
        Tape t;
        Var loss = mean(square(tanh(matmul(t.leaf(x), t.leaf(w)))));
        return t.value(loss).item();
    };
    double a = run();
    double b = run();
    CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
}

TEST_CASE("tensor binary save/load round trip") {
    Rng rng(9);
    Tensor t = random_tensor({3, 5}, rng);
    std::stringstream ss;
    t.write(ss);
    Tensor u = Tensor::read(ss);
    REQUIRE(u.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(u[i] == t[i]);

    Tensor s = Tensor::scalar(42.0);
    std::stringstream ss2;
    s.write(ss2);
    Tensor s2 = Tensor::read(ss2);
    CHECK(s2.rank() == 0);
    CHECK(s2.item() == 42.0);
}

TEST_CASE("constant subgraphs get no gradient bookkeeping") {
    Tape t;
    Var c = t.leaf(Tensor({2}, {1.0, 2.0}), false);
    Var x = t.leaf(Tensor({2}, {3.0, 4.0}), true);
    Var loss = sum(mul(c, x));
    t.backward(loss);
    CHECK(t.grad(x)[0] == 1.0);
    CHECK(t.grad(x)[1] == 2.0);
    // constant leaf keeps a zero grad
    CHECK(t.grad(c)[0] == 0.0);
}
