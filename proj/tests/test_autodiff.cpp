#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ddnet/ops.hpp"
#include "ddnet/tensor.hpp"

using namespace ddnet;

namespace {

Tensor randn(std::vector<int> shape, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> d(0.0, sd);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = d(rng);
    return t;
}

}  // namespace

TEST_CASE("conv2d on zero input yields bias everywhere") {
    Tensor x({1, 1, 3, 3});
    std::mt19937_64 rng(1);
    Tensor w = randn({1, 1, 3, 3}, rng);
    Tensor b = Tensor::from_data({1}, {0.37});
    Tensor y = conv2d(x, w, b, 1, 1);
    REQUIRE(y.shape() == std::vector<int>{1, 1, 3, 3});
    for (double v : y.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-15));
}

TEST_CASE("conv2d with 1x1 kernel=2 doubles the input") {
    Tensor x = Tensor::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor w = Tensor::from_data({1, 1, 1, 1}, {2.0});
    Tensor y = conv2d(x, w, Tensor({1}));
    for (std::size_t i = 0; i < 9; ++i)
        CHECK(y.data()[i] == doctest::Approx(2.0 * x.data()[i]));
}

TEST_CASE("conv2d 3x3 ones over 4x4 ones sums the window") {
    Tensor x({1, 1, 4, 4}, 1.0);
    Tensor w({1, 1, 3, 3}, 1.0);
    Tensor y = conv2d(x, w, Tensor({1}));
    REQUIRE(y.shape() == std::vector<int>{1, 1, 2, 2});
    for (double v : y.data()) CHECK(v == doctest::Approx(9.0));
}

TEST_CASE("conv2d output shape follows the stride/padding/dilation formula") {
    std::mt19937_64 rng(2);
    Tensor x = randn({2, 3, 11, 9}, rng);
    Tensor w = randn({4, 3, 3, 3}, rng);
    Tensor y = conv2d(x, w, Tensor({4}), 2, 1, 2);
    // H' = floor((11 + 2 - 2*2 - 1)/2) + 1 = 5, W' = floor((9+2-5)/2)+1 = 4
    CHECK(y.shape() == std::vector<int>{2, 4, 5, 4});
}

TEST_CASE("conv2d rejects channel mismatch and oversized kernels") {
    Tensor x({1, 2, 4, 4});
    CHECK_THROWS_AS(conv2d(x, Tensor({1, 3, 3, 3}), Tensor({1})),
                    std::invalid_argument);
    CHECK_THROWS_AS(conv2d(x, Tensor({1, 2, 5, 5}), Tensor({1})),
                    std::invalid_argument);
}

TEST_CASE("conv2d flags non-finite values instead of propagating them") {
    Tensor x({1, 1, 2, 2}, 1e308);
    Tensor w({1, 1, 1, 1}, 1e10);
    CHECK_THROWS_AS(conv2d(x, w, Tensor({1})), std::runtime_error);
}

TEST_CASE("conv2d with channel-identity 1x1 weight is the identity") {
    std::mt19937_64 rng(3);
    Tensor x = randn({2, 3, 5, 5}, rng);
    Tensor w({3, 3, 1, 1});
    for (int k = 0; k < 3; ++k) w.data()[static_cast<std::size_t>(k) * 3 + k] = 1.0;
    Tensor y = conv2d(x, w, Tensor({3}));
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-14));
}

TEST_CASE("relu clamps negatives") {
    Tensor x = Tensor::from_data({3}, {-1, 0, 2});
    Tensor y = relu(x);
    CHECK(y.data() == std::vector<double>{0, 0, 2});
}

TEST_CASE("global_avg_pool averages the plane") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(global_avg_pool(x).item() == doctest::Approx(2.5));
}

TEST_CASE("softmax of equal logits is uniform and sums to one") {
    Tensor z({1, 3, 1, 1});
    Tensor s = softmax_channels(z);
    for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0));

    std::mt19937_64 rng(4);
    Tensor x = randn({2, 3, 4, 4}, rng);
    Tensor sm = softmax_channels(x);
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 16; ++i) {
            double total = 0;
            for (int c = 0; c < 3; ++c)
                total += sm.data()[static_cast<std::size_t>((n * 3 + c) * 16 + i)];
            CHECK(std::abs(total - 1.0) < 1e-12);
        }
}

TEST_CASE("max_pool2d routes gradient to the first argmax on ties") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {5, 5, 5, 5});
    tape_clear();
    x.set_requires_grad(true);
    Tensor y = max_pool2d(x, 2, 2);
    backward(sum(y));
    CHECK(x.grad() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("backward of a linear function") {
    Tensor x = Tensor::from_data({3}, {1, 2, 3});
    tape_clear();
    x.set_requires_grad(true);
    backward(sum(scale(x, 2.0)));
    CHECK(x.grad() == std::vector<double>{2, 2, 2});
}

TEST_CASE("backward of a quadratic") {
    Tensor x = Tensor::from_data({3}, {1, -2, 3});
    tape_clear();
    x.set_requires_grad(true);
    backward(sum(mul(x, x)));
    CHECK(x.grad()[0] == doctest::Approx(2));
    CHECK(x.grad()[1] == doctest::Approx(-4));
    CHECK(x.grad()[2] == doctest::Approx(6));
}

TEST_CASE("cross-entropy at uniform logits gives softmax-minus-onehot grads") {
    Tensor z({1, 3, 1, 1});
    tape_clear();
    z.set_requires_grad(true);
    Tensor loss = cross_entropy_loss(z, {0});
    CHECK(loss.item() == doctest::Approx(std::log(3.0)));
    backward(loss);
    CHECK(z.grad()[0] == doctest::Approx(1.0 / 3.0 - 1.0));
    CHECK(z.grad()[1] == doctest::Approx(1.0 / 3.0));
    CHECK(z.grad()[2] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor x({3}, 1.0);
    tape_clear();
    x.set_requires_grad(true);
    Tensor y = scale(x, 2.0);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("gradient accumulation: backward(f+g) equals separate backwards") {
    std::mt19937_64 rng(5);
    Tensor base = randn({1, 2, 4, 4}, rng);

    Tensor x1 = Tensor::from_data(base.shape(), base.data());
    tape_clear();
    x1.set_requires_grad(true);
    Tensor f = sum(mul(x1, x1));
    Tensor g = sum(relu(x1));
    backward(add(f, g));
    std::vector<double> joint = x1.grad();

    Tensor x2 = Tensor::from_data(base.shape(), base.data());
    tape_clear();
    x2.set_requires_grad(true);
    backward(sum(mul(x2, x2)));
    tape_clear();
    backward(sum(relu(x2)));  // accumulates on top
    for (std::size_t i = 0; i < joint.size(); ++i)
        CHECK(joint[i] == doctest::Approx(x2.grad()[i]).epsilon(1e-12));
}

TEST_CASE("grad_check: exact for linear, tight off relu kinks") {
    std::mt19937_64 rng(6);
    Tensor x = randn({2, 3}, rng);
    CHECK(grad_check([](const Tensor& t) { return sum(t); }, x) < 1e-10);

    Tensor y = randn({8}, rng);
    for (double& v : y.data())
        if (std::abs(v) < 1e-4) v = 0.5;  // keep probes off the kink
    CHECK(grad_check([](const Tensor& t) { return sum(relu(t)); }, y) < 1e-6);
}

TEST_CASE("grad_check on a 2-layer conv net with cross-entropy") {
    std::mt19937_64 rng(7);
    Tensor w1 = randn({4, 1, 3, 3}, rng, 0.5);
    Tensor b1 = randn({4}, rng, 0.1);
    Tensor w2 = randn({3, 4, 1, 1}, rng, 0.5);
    Tensor b2 = randn({3}, rng, 0.1);
    std::vector<int> targets(64, 1);
    auto net = [&](const Tensor& in) {
        Tensor h = relu(conv2d(in, w1, b1, 1, 1));
        Tensor logits = conv2d(h, w2, b2);
        return cross_entropy_loss(logits, targets);
    };
    Tensor x = randn({1, 1, 8, 8}, rng);
    CHECK(grad_check(net, x) < 1e-4);
}

TEST_CASE("grad_check every differentiable op at randomized inputs") {
    std::mt19937_64 rng(8);
    for (int seed = 0; seed < 3; ++seed) {
        Tensor x = randn({2, 4, 6, 6}, rng);
        // nudge away from max-pool/channel-max ties and relu kinks
        for (double& v : x.data())
            if (std::abs(v) < 1e-3) v = 0.123;
        std::mt19937_64 wrng(static_cast<std::uint64_t>(seed) + 100);
        Tensor w = randn({2, 4, 3, 3}, wrng, 0.5);
        Tensor b = randn({2}, wrng, 0.1);

        CHECK(grad_check([&](const Tensor& t) { return sum(conv2d(t, w, b, 2, 1)); }, x) < 1e-4);
        CHECK(grad_check([](const Tensor& t) { return sum(sigmoid(t)); }, x) < 1e-4);
        CHECK(grad_check([](const Tensor& t) { return sum(max_pool2d(t, 2, 2)); }, x) < 1e-4);
        CHECK(grad_check([](const Tensor& t) { return sum(global_avg_pool(t)); }, x) < 1e-4);
        CHECK(grad_check([](const Tensor& t) { return sum(global_max_pool(t)); }, x) < 1e-4);
        CHECK(grad_check([](const Tensor& t) { return sum(channel_mean(t)); }, x) < 1e-4);
        CHECK(grad_check([](const Tensor& t) { return sum(channel_max(t)); }, x) < 1e-4);
        CHECK(grad_check([](const Tensor& t) { return sum(bilinear_resize(t, 9, 4)); }, x) < 1e-4);
        CHECK(grad_check([](const Tensor& t) { return sum(mul(softmax_channels(t), t)); }, x) < 1e-4);
        CHECK(grad_check([&](const Tensor& t) { return sum(mul(t, w)); },
                         randn({2, 4, 3, 3}, rng)) < 1e-4);
        // broadcast paths used by the fusion block
        Tensor mc = randn({2, 4, 1, 1}, rng);
        CHECK(grad_check([&](const Tensor& t) { return sum(mul(mc, t)); }, x) < 1e-4);
        CHECK(grad_check([&](const Tensor& t) { return sum(mul(t, x)); }, mc) < 1e-4);
    }
}

TEST_CASE("grad_check validates eps range") {
    Tensor x({2}, 1.0);
    CHECK_THROWS_AS(grad_check([](const Tensor& t) { return sum(t); }, x, 1e-8),
                    std::invalid_argument);
}

TEST_CASE("sgd: plain step subtracts lr*grad") {
    Tensor p = Tensor::from_data({2}, {1.0, 2.0});
    p.set_requires_grad(true);
    p.zero_grad();
    p.grad()[0] = 0.5;
    p.grad()[1] = -0.25;
    Sgd opt({p}, 1.0, 0.0, 0.0);
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(0.5));
    CHECK(p.data()[1] == doctest::Approx(2.25));
    CHECK(p.grad() == std::vector<double>{0, 0});
}

TEST_CASE("sgd: momentum unrolls to g + 1.9g over two steps") {
    Tensor p = Tensor::from_data({1}, {0.0});
    p.set_requires_grad(true);
    Sgd opt({p}, 1.0, 0.9, 0.0);
    const double g = 0.3;
    for (int i = 0; i < 2; ++i) {
        p.zero_grad();
        p.grad()[0] = g;
        opt.step();
    }
    CHECK(p.data()[0] == doctest::Approx(-(g + 1.9 * g)));
}

TEST_CASE("sgd: weight decay alone shrinks the parameter") {
    Tensor p = Tensor::from_data({1}, {1.0});
    p.set_requires_grad(true);
    p.zero_grad();
    Sgd opt({p}, 1.0, 0.0, 0.00004);
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(0.99996));
}

TEST_CASE("sgd: missing gradient is a contract error") {
    Tensor p({2}, 1.0);
    p.set_requires_grad(true);
    Sgd opt({p}, 0.1, 0.9, 0.0);
    CHECK_THROWS_AS(opt.step(), std::logic_error);
}
