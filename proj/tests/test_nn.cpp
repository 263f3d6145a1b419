#include <doctest.h>

#include <sstream>

#include "exoendo/errors.hpp"
#include "exoendo/nn.hpp"

using namespace exoendo;

namespace {

// Central differences of sum(c .* net(x)) with respect to one weight.
double fd_weight(Mlp net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& c, size_t layer, Eigen::Index i, Eigen::Index j) {
    const double h = 1e-6, w0 = net.w[layer](i, j);
    net.w[layer](i, j) = w0 + h;
    const double up = net.forward(x).cwiseProduct(c).sum();
    net.w[layer](i, j) = w0 - h;
    const double down = net.forward(x).cwiseProduct(c).sum();
    return (up - down) / (2 * h);
}

} // namespace

TEST_CASE("backprop matches finite differences") {
    for (auto act : {Activation::relu, Activation::tanh}) {
        Rng rng(3);
        Mlp net({3, 7, 5, 2}, act, rng);
        Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 6), c = Eigen::MatrixXd::Random(2, 6);
        Mlp::Tape tape;
        net.forward(x, tape);
        auto g = net.backward(tape, c);
        for (size_t k = 0; k < net.num_layers(); ++k)
            for (Eigen::Index i = 0; i < net.w[k].rows(); i += 2)
                for (Eigen::Index j = 0; j < net.w[k].cols(); j += 2)
                    CHECK(g.dw[k](i, j) == doctest::Approx(fd_weight(net, x, c, k, i, j)).epsilon(1e-5));
        Mlp shifted = net;
        shifted.b[0](1) += 1e-6;
        const double up = shifted.forward(x).cwiseProduct(c).sum();
        shifted.b[0](1) -= 2e-6;
        const double down = shifted.forward(x).cwiseProduct(c).sum();
        CHECK(g.db[0](1) == doctest::Approx((up - down) / 2e-6).epsilon(1e-5));
    }
}

TEST_CASE("initialization respects the fan-in bound and is seeded") {
    Rng a(9), b(9);
    Mlp n1({4, 50, 1}, Activation::relu, a), n2({4, 50, 1}, Activation::relu, b);
    CHECK(n1.w[0].cwiseAbs().maxCoeff() <= 0.5);
    CHECK(n1.w[1].cwiseAbs().maxCoeff() <= 1 / std::sqrt(50.0));
    CHECK(n1.w[0] == n2.w[0]);
    CHECK_THROWS_AS(n1.forward(Eigen::MatrixXd::Zero(3, 1)), dimension_error);
}

TEST_CASE("adam with zero learning rate leaves parameters bitwise unchanged") {
    Rng rng(1);
    Mlp net({2, 4, 1}, Activation::tanh, rng);
    const Mlp before = net;
    AdamConfig cfg;
    cfg.learning_rate = 0;
    Adam opt(net, cfg);
    auto g = net.zero_grads();
    g.dw[0].setOnes();
    opt.step(net, g);
    CHECK(opt.steps() == 1);
    for (size_t k = 0; k < net.num_layers(); ++k) {
        CHECK(net.w[k] == before.w[k]);
        CHECK(net.b[k] == before.b[k]);
    }
}

TEST_CASE("adam first step moves each parameter by about the learning rate") {
    Rng rng(2);
    Mlp net({1, 1}, Activation::relu, rng);
    const double w0 = net.w[0](0, 0);
    Adam opt(net, AdamConfig{});
    auto g = net.zero_grads();
    g.dw[0](0, 0) = 5.0;
    opt.step(net, g);
    CHECK(net.w[0](0, 0) == doctest::Approx(w0 - 3e-4).epsilon(1e-6));
}

TEST_CASE("adam minimizes a quadratic") {
    Rng rng(5);
    Mlp net({1, 1}, Activation::relu, rng);
    AdamConfig cfg;
    cfg.learning_rate = 0.05;
    Adam opt(net, cfg);
    for (int i = 0; i < 2000; ++i) {
        auto g = net.zero_grads();
        g.dw[0](0, 0) = 2 * (net.w[0](0, 0) - 1.5);
        g.db[0](0) = 2 * (net.b[0](0) + 0.5);
        opt.step(net, g);
    }
    CHECK(net.w[0](0, 0) == doctest::Approx(1.5).epsilon(1e-3));
    CHECK(net.b[0](0) == doctest::Approx(-0.5).epsilon(1e-3));
}

TEST_CASE("net and optimizer checkpoints round-trip exactly") {
    Rng rng(4);
    Mlp net({3, 5, 2}, Activation::tanh, rng);
    Adam opt(net, AdamConfig{});
    auto g = net.zero_grads();
    g.dw[1].setConstant(0.3);
    opt.step(net, g);
    std::stringstream ss;
    net.write(ss);
    opt.write(ss);
    Mlp back = Mlp::read(ss);
    Adam opt_back = Adam::read(ss);
    CHECK(back.sizes() == net.sizes());
    CHECK(back.activation() == Activation::tanh);
    for (size_t k = 0; k < net.num_layers(); ++k) CHECK(back.w[k] == net.w[k]);
    CHECK(opt_back.steps() == 1);
    std::stringstream bad("mlp relu 2 3");
    CHECK_THROWS_AS(Mlp::read(bad), io_error);
}
