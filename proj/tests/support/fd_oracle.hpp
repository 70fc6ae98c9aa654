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

#pragma once

// Central finite-difference reference for the autodiff tests. Evaluates
// losses only through DenseNetwork::forward_batch and plain Eigen arithmetic,
// never through the tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "qpinn/autodiff.hpp"
#include "qpinn/random.hpp"

namespace fd {

using qpinn::ad::DenseNetwork;
using qpinn::ad::Matrix;

/// Error relative to the larger magnitude, absolute below `floor`.
inline double scaled_error(double a, double b, double floor = 1e-3) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline DenseNetwork random_network(qpinn::Rng &rng, Eigen::Index in, Eigen::Index out,
                                   int max_layers = 3, Eigen::Index max_units = 16) {
    const int layers = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_layers)));
    std::vector<Eigen::Index> widths{in};
    for (int l = 0; l + 1 < layers; ++l) {
        widths.push_back(1 + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(max_units))));
    }
    widths.push_back(out);
    auto net = DenseNetwork::xavier(widths, rng);
    for (auto *p : net.parameters()) {
        for (Eigen::Index i = 0; i < p->size(); ++i) {
            p->data()[i] += rng.uniform(-0.2, 0.2); // nonzero biases too
        }
    }
    return net;
}

inline Matrix random_matrix(qpinn::Rng &rng, Eigen::Index rows, Eigen::Index cols,
                            double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.uniform(-scale, scale);
    }
    return m;
}

/// d output[:, 0] / d input[:, index] by central differences.
inline Eigen::VectorXd input_derivative(const DenseNetwork &net, const Matrix &x,
                                        Eigen::Index index, Eigen::Index output = 0,
                                        double h = 1e-5) {
    Matrix xp = x;
    Matrix xm = x;
    xp.col(index).array() += h;
    xm.col(index).array() -= h;
    return (net.forward_batch(xp).col(output) - net.forward_batch(xm).col(output)) / (2.0 * h);
}

/**
 * Central-difference gradient of a scalar loss over every parameter of
 * `nets[k]`. The loss callback reads the (perturbed) networks.
 */
inline std::vector<Matrix> parameter_gradient(std::vector<DenseNetwork> &nets, std::size_t k,
                                              const std::function<double()> &loss,
                                              double h = 1e-5) {
    std::vector<Matrix> out;
    for (auto *p : nets[k].parameters()) {
        Matrix g(p->rows(), p->cols());
        for (Eigen::Index i = 0; i < p->size(); ++i) {
            const double keep = p->data()[i];
            p->data()[i] = keep + h;
            const double up = loss();
            p->data()[i] = keep - h;
            const double down = loss();
            p->data()[i] = keep;
            g.data()[i] = (up - down) / (2.0 * h);
        }
        out.push_back(std::move(g));
    }
    return out;
}

inline double max_scaled_error(const std::vector<Matrix> &a, const std::vector<Matrix> &b,
                               double floor = 1e-3) {
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        for (Eigen::Index i = 0; i < a[k].size(); ++i) {
            worst = std::max(worst, scaled_error(a[k].data()[i], b[k].data()[i], floor));
        }
    }
    return worst;
}

} // namespace fd

namespace fd {

/// Plain chain-rule tangent of output[:, 0] along input column `index`.
inline Eigen::VectorXd analytic_input_derivative(const DenseNetwork &net, const Matrix &x,
                                                 Eigen::Index index) {
    Matrix h = x;
    Matrix t = Matrix::Zero(x.rows(), x.cols());
    t.col(index).setOnes();
    for (const auto &layer : net.layers()) {
        Matrix pre = h * layer.weights.transpose();
        pre.rowwise() += layer.bias.row(0);
        Matrix tp = t * layer.weights.transpose();
        if (layer.activation == qpinn::ad::Activation::tanh) {
            pre = pre.array().tanh().matrix();
            tp = (tp.array() * (1.0 - pre.array().square())).matrix();
        }
        h = std::move(pre);
        t = std::move(tp);
    }
    return t.col(0);
}

} // namespace fd
