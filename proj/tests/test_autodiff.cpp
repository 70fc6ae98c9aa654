// Copyright 2026 The QPINN Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <catch_amalgamated.hpp>

#include "qpinn/adam.hpp"
#include "qpinn/autodiff.hpp"
#include "support/fd_oracle.hpp"

using namespace qpinn;
using namespace qpinn::ad;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

DenseNetwork affine_1d(double w, double b) {
    DenseLayer l;
    l.weights = Matrix::Constant(1, 1, w);
    l.bias = Matrix::Constant(1, 1, b);
    l.activation = Activation::identity;
    return DenseNetwork({l});
}

// f(x) = v * tanh(w x)
DenseNetwork tanh_1d(double w, double v = 1.0) {
    DenseLayer a;
    a.weights = Matrix::Constant(1, 1, w);
    a.bias = Matrix::Zero(1, 1);
    a.activation = Activation::tanh;
    DenseLayer b;
    b.weights = Matrix::Constant(1, 1, v);
    b.bias = Matrix::Zero(1, 1);
    b.activation = Activation::identity;
    return DenseNetwork({a, b});
}

// Reference form of the nested loss used below.
double nested_loss_reference(const DenseNetwork &f, const DenseNetwork &g, const Matrix &x,
                             const Matrix &y) {
    const Eigen::VectorXd u = f.forward_batch(x).col(0);
    const Eigen::VectorXd ut = fd::analytic_input_derivative(f, x, 0);
    const Eigen::VectorXd ux = fd::analytic_input_derivative(f, x, 2);
    Matrix gin(x.rows(), x.cols() + 3);
    gin << x, u, ut, ux;
    const Eigen::VectorXd gv = g.forward_batch(gin).col(0);
    return (ut - gv).squaredNorm() / static_cast<double>(x.rows()) +
           0.3 * (u - y.col(0)).squaredNorm() / static_cast<double>(x.rows());
}

struct NestedResult {
    double loss;
    GradientBundle f_grad;
    GradientBundle g_grad;
};

NestedResult nested_loss_tape(const DenseNetwork &f, const DenseNetwork &g, const Matrix &x,
                              const Matrix &y) {
    Tape tape;
    const auto bf = bind(tape, f);
    const auto bg = bind(tape, g);
    const Var xv = tape.constant(x);
    const auto trace = forward(tape, bf, xv);
    const Var u = trace.output();
    const Var ut = input_jacobian_row(tape, bf, trace, x.rows(), 0);
    const Var ux = input_jacobian_row(tape, bf, trace, x.rows(), 2);
    const std::vector<InputBlock> blocks{{xv, 0}, {u, x.cols()}, {ut, x.cols() + 1},
                                         {ux, x.cols() + 2}};
    const Var gv = forward(tape, bg, blocks).output();
    const Var loss = tape.add(tape.mean_square(tape.sub(ut, gv)),
                              tape.scale(tape.mean_square(tape.sub(u, tape.constant(y))), 0.3));
    tape.backward(loss);
    return {tape.scalar(loss), gradients(tape, bf), gradients(tape, bg)};
}

} // namespace

TEST_CASE("forward evaluates affine and tanh layers", "[autodiff]") {
    DenseLayer id;
    id.weights = Matrix::Identity(3, 3);
    id.bias = Matrix::Zero(1, 3);
    id.activation = Activation::identity;
    const DenseNetwork identity({id});
    const Eigen::Vector3d x(0.5, -2.0, 3.0);
    CHECK(forward(identity, x) == x);

    CHECK(forward(tanh_1d(3.0), Eigen::VectorXd::Zero(1))(0) == 0.0);
    CHECK(forward(affine_1d(2.0, 1.0), Eigen::VectorXd::Constant(1, 3.0))(0) == 7.0);
    CHECK_THROWS_AS(forward(identity, Eigen::VectorXd::Zero(2)), InvalidInput);
}

TEST_CASE("network construction invariants", "[autodiff]") {
    Rng rng(1);
    const auto net = DenseNetwork::xavier({4, 8, 8, 1}, rng);
    CHECK(net.parameter_count() == 4 * 8 + 8 + 8 * 8 + 8 + 8 + 1);
    CHECK(net.layers().back().activation == Activation::identity);
    CHECK(net.layers().front().activation == Activation::tanh);
    DenseLayer bad;
    bad.weights = Matrix::Zero(2, 2);
    bad.bias = Matrix::Zero(1, 2);
    bad.activation = Activation::tanh;
    CHECK_THROWS_AS(DenseNetwork({bad}), InvalidInput);
}

TEST_CASE("input derivatives of simple networks", "[autodiff]") {
    for (double x : {-1.0, 0.0, 4.0}) {
        CHECK(input_jacobian_row(affine_1d(2.0, 1.0), Eigen::VectorXd::Constant(1, x), 0)(0) ==
              2.0);
    }
    CHECK_THAT(input_jacobian_row(tanh_1d(1.7), Eigen::VectorXd::Zero(1), 0)(0),
               WithinAbs(1.7, 1e-15));
    CHECK_THROWS_AS(input_jacobian_row(tanh_1d(1.0), Eigen::VectorXd::Zero(1), 1),
                    InvalidInput);
}

TEST_CASE("input derivatives match finite differences", "[autodiff]") {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        const auto net = fd::random_network(rng, 3, 1);
        const Matrix x = fd::random_matrix(rng, 4, 3);
        for (Index j = 0; j < 3; ++j) {
            Tape tape;
            const auto b = bind(tape, net, false);
            const auto trace = forward(tape, b, tape.constant(x));
            const Eigen::VectorXd got = tape.value(input_jacobian_row(tape, b, trace, 4, j)).col(0);
            const Eigen::VectorXd ref = fd::input_derivative(net, x, j);
            for (Index r = 0; r < 4; ++r) {
                CHECK(fd::scaled_error(got(r), ref(r)) <= 1e-5);
            }
        }
    }
}

TEST_CASE("backward of a squared error", "[autodiff]") {
    const double w = 1.5;
    const double b = -0.25;
    const double x = 2.0;
    const double y = 0.5;
    const auto net = affine_1d(w, b);
    Tape tape;
    const auto bn = bind(tape, net);
    const auto out = forward(tape, bn, tape.constant(Matrix::Constant(1, 1, x))).output();
    const auto loss = tape.mean_square(tape.sub(out, tape.constant(Matrix::Constant(1, 1, y))));
    tape.backward(loss);
    const auto g = gradients(tape, bn);
    CHECK_THAT(g.partials[0](0, 0), WithinAbs(2.0 * (w * x + b - y) * x, 1e-14));
    CHECK_THAT(g.partials[1](0, 0), WithinAbs(2.0 * (w * x + b - y), 1e-14));
}

TEST_CASE("backward through an input derivative", "[autodiff]") {
    // loss = (df/dx)^2 with f(x) = v tanh(w x), at x = 0: loss = v^2 w^2
    const double w = 0.8;
    const double v = 1.3;
    const auto net = tanh_1d(w, v);
    Tape tape;
    const auto bn = bind(tape, net);
    const auto trace = forward(tape, bn, tape.constant(Matrix::Zero(1, 1)));
    const auto dfdx = input_jacobian_row(tape, bn, trace, 1, 0);
    const auto loss = tape.mean_square(dfdx);
    tape.backward(loss);
    const auto g = gradients(tape, bn);
    CHECK_THAT(g.partials[0](0, 0), WithinAbs(2.0 * w * v * v, 1e-14));
    CHECK_THAT(g.partials[2](0, 0), WithinAbs(2.0 * v * w * w, 1e-14));

    const auto unit = tanh_1d(w, 1.0);
    Tape t2;
    const auto b2 = bind(t2, unit);
    const auto tr2 = forward(t2, b2, t2.constant(Matrix::Zero(1, 1)));
    const auto l2 = t2.mean_square(input_jacobian_row(t2, b2, tr2, 1, 0));
    t2.backward(l2);
    CHECK_THAT(gradients(t2, b2).partials[0](0, 0), WithinAbs(2.0 * w, 1e-14));
}

TEST_CASE("zero loss gives zero gradients", "[autodiff]") {
    Rng rng(3);
    const auto net = fd::random_network(rng, 2, 1);
    Tape tape;
    const auto bn = bind(tape, net);
    const auto out = forward(tape, bn, tape.constant(fd::random_matrix(rng, 5, 2))).output();
    tape.backward(tape.scale(tape.mean_square(out), 0.0));
    for (const auto &p : gradients(tape, bn).partials) {
        CHECK(p.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("parameter gradients match finite differences", "[autodiff]") {
    Rng rng(7);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<DenseNetwork> nets{fd::random_network(rng, 3, 2)};
        const Matrix x = fd::random_matrix(rng, 6, 3);
        const Matrix y = fd::random_matrix(rng, 6, 2);
        Tape tape;
        const auto bn = bind(tape, nets[0]);
        const auto out = forward(tape, bn, tape.constant(x)).output();
        tape.backward(tape.mean_square(tape.sub(out, tape.constant(y))));
        const auto got = gradients(tape, bn).partials;
        const auto ref = fd::parameter_gradient(nets, 0, [&] {
            return (nets[0].forward_batch(x) - y).squaredNorm() / static_cast<double>(y.size());
        });
        CHECK(fd::max_scaled_error(got, ref) <= 1e-5);
    }
}

TEST_CASE("nested losses match finite differences", "[autodiff]") {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<DenseNetwork> nets{fd::random_network(rng, 3, 1),
                                       fd::random_network(rng, 6, 1)};
        const Matrix x = fd::random_matrix(rng, 5, 3);
        const Matrix y = fd::random_matrix(rng, 5, 1);
        const auto res = nested_loss_tape(nets[0], nets[1], x, y);
        CHECK_THAT(res.loss, WithinAbs(nested_loss_reference(nets[0], nets[1], x, y), 1e-12));
        auto loss = [&] { return nested_loss_reference(nets[0], nets[1], x, y); };
        CHECK(fd::max_scaled_error(res.f_grad.partials, fd::parameter_gradient(nets, 0, loss)) <=
              1e-4);
        CHECK(fd::max_scaled_error(res.g_grad.partials, fd::parameter_gradient(nets, 1, loss)) <=
              1e-4);
    }
}

TEST_CASE("backward is linear in the loss", "[autodiff]") {
    Rng rng(13);
    const auto net = fd::random_network(rng, 3, 1);
    const Matrix x = fd::random_matrix(rng, 4, 3);
    const Matrix y = fd::random_matrix(rng, 4, 1);
    auto grads = [&](double a, double b) {
        Tape tape;
        const auto bn = bind(tape, net);
        const auto trace = forward(tape, bn, tape.constant(x));
        const auto l1 = tape.mean_square(tape.sub(trace.output(), tape.constant(y)));
        const auto l2 = tape.mean_square(input_jacobian_row(tape, bn, trace, 4, 1));
        tape.backward(tape.add(tape.scale(l1, a), tape.scale(l2, b)));
        return gradients(tape, bn).partials;
    };
    const auto g1 = grads(1.0, 0.0);
    const auto g2 = grads(0.0, 1.0);
    const auto gc = grads(0.7, -2.5);
    for (std::size_t k = 0; k < g1.size(); ++k) {
        CHECK((gc[k] - (0.7 * g1[k] - 2.5 * g2[k])).cwiseAbs().maxCoeff() <= 1e-12);
    }
    const auto again = grads(0.7, -2.5);
    for (std::size_t k = 0; k < gc.size(); ++k) {
        CHECK(again[k] == gc[k]);
    }
}

TEST_CASE("hinge and constant nodes", "[autodiff]") {
    Tape tape;
    Matrix d(3, 1);
    d << 0.5, -1.0, 2.0;
    const auto dv = tape.parameter(d);
    Eigen::VectorXd w(3);
    w << 1.0, 1.0, 0.5;
    const auto h = tape.weighted_hinge_square(dv, w);
    CHECK_THAT(tape.scalar(h), WithinAbs(0.25 + 0.5 * 4.0, 1e-15));
    tape.backward(h);
    const Matrix g = tape.grad(dv);
    CHECK(g(0, 0) == 1.0);
    CHECK(g(1, 0) == 0.0);
    CHECK(g(2, 0) == 2.0);
    CHECK_THROWS_AS(tape.backward(dv), InvalidInput);
}

TEST_CASE("adam step contract", "[autodiff][adam]") {
    SECTION("zero gradient is a fixed point") {
        Matrix p = Matrix::Constant(2, 2, 0.3);
        const Matrix before = p;
        std::vector<Matrix *> params{&p};
        std::vector<Matrix> grads{Matrix::Zero(2, 2)};
        AdamState state;
        for (int i = 0; i < 5; ++i) {
            CHECK(adam_step(params, grads, state, 0.1, 0.0).applied);
        }
        CHECK(p == before);
    }
    SECTION("global-norm clipping") {
        Matrix p = Matrix::Zero(1, 2);
        std::vector<Matrix *> params{&p};
        std::vector<Matrix> grads{Matrix(1, 2)};
        grads[0] << 6.0, 8.0;
        AdamState state;
        const auto out = adam_step(params, grads, state, 0.1, 0.0);
        CHECK_THAT(out.grad_norm, WithinAbs(10.0, 1e-14));
        CHECK_THAT(out.scale, WithinAbs(0.1, 1e-15));
        // first moment holds (1 - beta1) * clipped gradient
        CHECK_THAT(state.m[0](0, 0), WithinAbs(0.1 * 0.6, 1e-15));
        CHECK_THAT(state.m[0](0, 1), WithinAbs(0.1 * 0.8, 1e-15));
    }
    SECTION("first step moves by the learning rate") {
        Matrix p = Matrix::Constant(1, 1, 2.0);
        std::vector<Matrix *> params{&p};
        std::vector<Matrix> grads{Matrix::Constant(1, 1, 1.0)};
        AdamState state;
        adam_step(params, grads, state, 0.1, 0.0, AdamHyper{0.9, 0.999, 1e-8, 0.0});
        CHECK_THAT(p(0, 0) - 2.0, WithinAbs(-0.1, 1e-8));
    }
    SECTION("coupled weight decay enters the gradient") {
        Matrix p = Matrix::Constant(1, 1, 2.0);
        std::vector<Matrix *> params{&p};
        std::vector<Matrix> grads{Matrix::Zero(1, 1)};
        AdamState state;
        adam_step(params, grads, state, 0.1, 0.5);
        CHECK_THAT(state.m[0](0, 0), WithinAbs(0.1 * 0.5 * 2.0, 1e-15));
        CHECK(p(0, 0) < 2.0);
    }
    SECTION("non-finite gradients are rejected") {
        Matrix p = Matrix::Constant(1, 1, 2.0);
        std::vector<Matrix *> params{&p};
        std::vector<Matrix> grads{Matrix::Constant(1, 1, std::numeric_limits<double>::quiet_NaN())};
        AdamState state;
        const auto out = adam_step(params, grads, state, 0.1, 0.0);
        CHECK_FALSE(out.applied);
        CHECK(p(0, 0) == 2.0);
        CHECK(state.step == 0);
    }
}
