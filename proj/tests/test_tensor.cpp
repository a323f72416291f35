#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cacvit/gradcheck.hpp"
#include "cacvit/rng.hpp"
#include "cacvit/tensor.hpp"

using namespace cacvit;

TEST_CASE("matmul identity") {
    Tensor eye = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
    Tensor out = matmul(eye, a);
    for (std::size_t i = 0; i < 4; ++i) CHECK((*out.data)[i] == (*a.data)[i]);
}

TEST_CASE("matmul annihilation") {
    Tensor a = Tensor::from_vector({1, 2}, {1, 0});
    Tensor b = Tensor::from_vector({2, 1}, {0, 5});
    Tensor out = matmul(a, b);
    CHECK((*out.data)[0] == 0.0);
}

TEST_CASE("matmul shape mismatch throws") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("matmul gradient vs central differences") {
    Rng rng(7);
    Tensor a = Tensor::randn({3, 4}, rng, 1.0);
    Tensor b = Tensor::randn({4, 2}, rng, 1.0);
    auto f = [](std::vector<Tensor>& in) { return sum(matmul(in[0], in[1])); };
    GradCheckOptions opt;
    opt.h = 1e-5;
    const auto report = grad_check(f, {a, b}, opt);
    CHECK(report.failures.empty());
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("softmax symmetric row") {
    Tensor x = Tensor::from_vector({1, 2}, {0, 0});
    Tensor y = softmax_rows(x);
    CHECK((*y.data)[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK((*y.data)[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax stability under large logits") {
    Tensor x = Tensor::from_vector({1, 2}, {1000, 0});
    Tensor y = softmax_rows(x);
    CHECK((*y.data)[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((*y.data)[1] < 1e-300);
}

TEST_CASE("softmax rows normalize across seeds") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        Tensor x = Tensor::randn({4, 7}, rng, 3.0);
        Tensor y = softmax_rows(x);
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 7; ++j) s += y(i, j);
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("softmax shift invariance") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(100 + seed);
        Tensor x = Tensor::randn({3, 5}, rng, 2.0);
        Tensor shifted = Tensor::zeros({3, 5});
        const double c = rng.uniform(-10.0, 10.0);
        for (std::size_t i = 0; i < x.numel(); ++i) (*shifted.data)[i] = (*x.data)[i] + c;
        Tensor y0 = softmax_rows(x);
        Tensor y1 = softmax_rows(shifted);
        for (std::size_t i = 0; i < x.numel(); ++i)
            CHECK(std::abs((*y0.data)[i] - (*y1.data)[i]) < 1e-12);
    }
}

TEST_CASE("layer_norm constant row maps to bias") {
    Tensor x = Tensor::from_vector({1, 4}, {3, 3, 3, 3});
    Tensor gain = Tensor::full({4}, 1.0);
    Tensor bias = Tensor::zeros({4});
    Tensor y = layer_norm(x, gain, bias, 1e-6);
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs((*y.data)[j]) < 1e-9);
}

TEST_CASE("layer_norm leaves normalized row fixed as eps -> 0") {
    Tensor x = Tensor::from_vector({1, 2}, {1, -1});
    Tensor gain = Tensor::full({2}, 1.0);
    Tensor bias = Tensor::zeros({2});
    Tensor y = layer_norm(x, gain, bias, 1e-14);
    CHECK((*y.data)[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK((*y.data)[1] == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("layer_norm gradient vs central differences") {
    Rng rng(11);
    Tensor x = Tensor::randn({3, 6}, rng, 1.0);
    Tensor gain = Tensor::randn({6}, rng, 0.5);
    Tensor bias = Tensor::randn({6}, rng, 0.5);
    auto f = [](std::vector<Tensor>& in) {
        Tensor y = layer_norm(in[0], in[1], in[2], 1e-6);
        return sum(mul(y, y));
    };
    const auto report = grad_check(f, {x, gain, bias}, {});
    CHECK(report.failures.empty());
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("concat 1-D") {
    Tensor a = Tensor::from_vector({2}, {1, 2});
    Tensor b = Tensor::from_vector({1}, {3});
    Tensor c = concat({a, b}, 0);
    CHECK(c.shape == std::vector<std::size_t>{3});
    CHECK((*c.data) == std::vector<double>{1, 2, 3});
}

TEST_CASE("gelu at zero") {
    Tensor x = Tensor::scalar(0.0);
    CHECK((*gelu(x).data)[0] == 0.0);
}

TEST_CASE("sum gradient is ones") {
    Tape tape;
    Tensor x = Tensor::from_vector({3}, {1, 2, 3});
    x.set_requires_grad(&tape);
    Tensor s = sum(x);
    tape.backward(s);
    for (std::size_t i = 0; i < 3; ++i) CHECK((*x.grad)[i] == 1.0);
}

TEST_CASE("reshape/transpose/slice round-trips are bit-exact") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(200 + seed);
        Tensor x = Tensor::randn({4, 6}, rng, 1.0);
        Tensor back = transpose(transpose(x));
        CHECK(*back.data == *x.data);
        Tensor r = reshape(reshape(x, {24}), {4, 6});
        CHECK(*r.data == *x.data);
        Tensor left = slice(x, {{0, 4}, {0, 3}});
        Tensor right = slice(x, {{0, 4}, {3, 6}});
        Tensor joined = concat({left, right}, 1);
        CHECK(*joined.data == *x.data);
    }
}

TEST_CASE("elementwise gradients vs central differences") {
    Rng rng(13);
    Tensor a = Tensor::randn({2, 3}, rng, 1.0);
    Tensor b = Tensor::randn({2, 3}, rng, 1.0);
    auto f = [](std::vector<Tensor>& in) {
        Tensor t = add(mul(in[0], in[1]), scale(in[0], 0.5));
        t = gelu(t);
        return mean(mul(t, t));
    };
    const auto report = grad_check(f, {a, b}, {});
    CHECK(report.failures.empty());
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("conv2d and upsample2x gradients vs central differences") {
    Rng rng(17);
    Tensor x = Tensor::randn({2, 4, 4}, rng, 1.0);
    Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 0.3);
    Tensor b = Tensor::randn({3}, rng, 0.3);
    auto f = [](std::vector<Tensor>& in) {
        Tensor y = conv2d(upsample2x(in[0]), in[1], in[2], 1);
        return sum(mul(y, y));
    };
    const auto report = grad_check(f, {x, w, b}, {});
    CHECK(report.failures.empty());
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("grad_check closed form sum of squares") {
    Tensor x = Tensor::from_vector({2}, {1, 2});
    auto f = [](std::vector<Tensor>& in) { return sum(mul(in[0], in[0])); };
    Tape tape;
    Tensor leaf = x.detached();
    leaf.set_requires_grad(&tape);
    std::vector<Tensor> leaves{leaf};
    tape.backward(f(leaves));
    CHECK((*leaf.grad)[0] == doctest::Approx(2.0));
    CHECK((*leaf.grad)[1] == doctest::Approx(4.0));
    const auto report = grad_check(f, {x}, {});
    CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("relu kink excluded from comparison set") {
    Tensor x = Tensor::from_vector({3}, {-1.0, 0.0, 2.0});
    auto f = [](std::vector<Tensor>& in) { return sum(relu(in[0])); };
    GradCheckOptions opt;
    opt.exclude = {{0, 1}};
    const auto report = grad_check(f, {x}, opt);
    CHECK(report.checked == 2);
    CHECK(report.ok(1e-8));
}

TEST_CASE("grad_check flags a corrupted backward rule") {
    // A deliberately wrong backward: y = 2x recorded with gradient 3.
    auto bad_double = [](const Tensor& x) {
        Tensor out = scale(x, 2.0);
        if (x.requires_grad) {
            x.tape->record([x, out]() {
                for (std::size_t i = 0; i < x.numel(); ++i) (*x.grad)[i] += (*out.grad)[i];
            });
        }
        return out;
    };
    Tensor x = Tensor::from_vector({2}, {1.0, -2.0});
    auto f = [&](std::vector<Tensor>& in) { return sum(bad_double(in[0])); };
    const auto report = grad_check(f, {x}, {});
    CHECK(report.max_rel_err > 0.3);
}

TEST_CASE("grad_check reports non-finite evaluations") {
    Tensor x = Tensor::from_vector({1}, {0.0});
    auto f = [](std::vector<Tensor>& in) {
        Tensor big = scale(in[0], 1e308);
        return sum(mul(big, big)); // overflows for |x| around h
    };
    const auto report = grad_check(f, {x}, {});
    CHECK(!report.failures.empty());
}

TEST_CASE("double backward without reset throws") {
    Tape tape;
    Tensor x = Tensor::from_vector({2}, {1, 2});
    x.set_requires_grad(&tape);
    Tensor s = sum(x);
    tape.backward(s);
    CHECK_THROWS_AS(tape.backward(s), Error);
    tape.reset();
}

TEST_CASE("non-finite forward output is rejected") {
    Tensor a = Tensor::from_vector({1}, {1e308});
    Tensor b = Tensor::from_vector({1}, {1e308});
    CHECK_THROWS_AS(mul(a, b), NumericalError);
}

TEST_CASE("seeded init is deterministic") {
    Rng r1(42), r2(42);
    Tensor a = Tensor::randn({32}, r1, 0.02);
    Tensor b = Tensor::randn({32}, r2, 0.02);
    CHECK(*a.data == *b.data);
}

TEST_CASE("gradient accumulation on shared inputs") {
    Tape tape;
    Tensor x = Tensor::from_vector({2}, {1.0, 3.0});
    x.set_requires_grad(&tape);
    Tensor s = sum(add(x, x)); // d/dx = 2
    tape.backward(s);
    CHECK((*x.grad)[0] == 2.0);
    CHECK((*x.grad)[1] == 2.0);
}
