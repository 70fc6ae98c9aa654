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

/**
 * @file autodiff.hpp
 * Reverse-mode differentiation over a tape of dense matrix operations, sized
 * for small fully connected networks evaluated on row batches.
 *
 * Input derivatives (u_t, u_x) are obtained by pushing forward-mode tangents
 * through a network. The tangent computation is itself recorded with ordinary
 * tape operations, so a loss that contains input derivatives can be
 * differentiated with respect to parameters by a single backward pass
 * (reverse over forward, one nesting level).
 */

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "random.hpp"

namespace qpinn::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

enum class Activation { tanh, identity };

inline std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

inline Activation activation_from_string(const std::string &s) {
    if (s == "tanh") {
        return Activation::tanh;
    }
    if (s == "identity") {
        return Activation::identity;
    }
    throw InvalidInput("unknown activation '" + s + "'");
}

struct DenseLayer {
    Matrix weights; ///< out x in
    Matrix bias;    ///< 1 x out
    Activation activation = Activation::tanh;

    bool operator==(const DenseLayer &o) const {
        return activation == o.activation && weights.rows() == o.weights.rows() &&
               weights.cols() == o.weights.cols() && weights == o.weights && bias == o.bias;
    }
};

class DenseNetwork {
  public:
    DenseNetwork() = default;

    explicit DenseNetwork(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
        validate();
    }

    /// Xavier-uniform weights, zero biases, tanh hidden layers and identity output.
    static DenseNetwork xavier(const std::vector<Index> &widths, Rng &rng) {
        require(widths.size() >= 2, "DenseNetwork: need at least input and output width");
        std::vector<DenseLayer> layers;
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            const Index in = widths[l];
            const Index out = widths[l + 1];
            require(in >= 1 && out >= 1, "DenseNetwork: widths must be positive");
            const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
            DenseLayer layer;
            layer.weights.resize(out, in);
            for (Index i = 0; i < out; ++i) {
                for (Index j = 0; j < in; ++j) {
                    layer.weights(i, j) = rng.uniform(-limit, limit);
                }
            }
            layer.bias = Matrix::Zero(1, out);
            layer.activation = l + 2 == widths.size() ? Activation::identity : Activation::tanh;
            layers.push_back(std::move(layer));
        }
        return DenseNetwork(std::move(layers));
    }

    void validate() const {
        require(!layers_.empty(), "DenseNetwork: no layers");
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto &layer = layers_[l];
            require(layer.bias.rows() == 1 && layer.bias.cols() == layer.weights.rows(),
                    "DenseNetwork: bias shape mismatch in layer " + std::to_string(l));
            if (l > 0) {
                require(layer.weights.cols() == layers_[l - 1].weights.rows(),
                        "DenseNetwork: layer " + std::to_string(l) + " does not chain");
            }
            require(layer.weights.allFinite() && layer.bias.allFinite(),
                    "DenseNetwork: non-finite parameters");
        }
        require(layers_.back().activation == Activation::identity,
                "DenseNetwork: final layer must be identity");
    }

    [[nodiscard]] bool empty() const noexcept { return layers_.empty(); }
    [[nodiscard]] Index input_width() const { return layers_.front().weights.cols(); }
    [[nodiscard]] Index output_width() const { return layers_.back().weights.rows(); }
    [[nodiscard]] const std::vector<DenseLayer> &layers() const noexcept { return layers_; }
    [[nodiscard]] std::vector<DenseLayer> &layers() noexcept { return layers_; }

    [[nodiscard]] Index parameter_count() const {
        Index n = 0;
        for (const auto &l : layers_) {
            n += l.weights.size() + l.bias.size();
        }
        return n;
    }

    /// Parameter matrices in layout order W0, b0, W1, b1, ...
    [[nodiscard]] std::vector<Matrix *> parameters() {
        std::vector<Matrix *> out;
        for (auto &l : layers_) {
            out.push_back(&l.weights);
            out.push_back(&l.bias);
        }
        return out;
    }

    [[nodiscard]] std::vector<const Matrix *> parameters() const {
        std::vector<const Matrix *> out;
        for (const auto &l : layers_) {
            out.push_back(&l.weights);
            out.push_back(&l.bias);
        }
        return out;
    }

    /// Row-batch evaluation without recording.
    [[nodiscard]] Matrix forward_batch(const Matrix &x) const {
        require(x.cols() == input_width(), "forward: input width mismatch");
        Matrix h = x;
        for (const auto &layer : layers_) {
            Matrix pre = h * layer.weights.transpose();
            pre.rowwise() += layer.bias.row(0);
            if (layer.activation == Activation::tanh) {
                pre = pre.array().tanh().matrix();
            }
            h = std::move(pre);
        }
        return h;
    }

    bool operator==(const DenseNetwork &) const = default;

  private:
    std::vector<DenseLayer> layers_;
};

inline Eigen::VectorXd forward(const DenseNetwork &net, const Eigen::VectorXd &input) {
    require(input.size() == net.input_width(),
            "forward: expected input of length " + std::to_string(net.input_width()));
    return net.forward_batch(input.transpose()).row(0).transpose();
}

/// Handle to a node on a Tape.
struct Var {
    int id = -1;
    [[nodiscard]] bool valid() const noexcept { return id >= 0; }
};

class Tape {
  public:
    Var constant(Matrix value) { return push(Op::constant, {}, std::move(value), false); }

    Var parameter(const Matrix &value) { return push(Op::parameter, {}, value, true); }

    /// x * w.middleCols(offset, x.cols())^T
    Var linear_block(Var x, Var w, Index offset) {
        const auto &xv = value(x);
        const auto &wv = value(w);
        require(offset >= 0 && offset + xv.cols() <= wv.cols(),
                "linear_block: column block out of range");
        Matrix out = xv * wv.middleCols(offset, xv.cols()).transpose();
        return push(Op::linear_block, {x, w}, std::move(out), needs(x) || needs(w), offset);
    }

    Var add_bias(Var x, Var bias) {
        require(value(bias).rows() == 1 && value(bias).cols() == value(x).cols(),
                "add_bias: shape mismatch");
        Matrix out = value(x);
        out.rowwise() += value(bias).row(0);
        return push(Op::add_bias, {x, bias}, std::move(out), needs(x) || needs(bias));
    }

    Var add(Var a, Var b) {
        require_same_shape(a, b, "add");
        return push(Op::add, {a, b}, value(a) + value(b), needs(a) || needs(b));
    }

    Var sub(Var a, Var b) {
        require_same_shape(a, b, "sub");
        return push(Op::sub, {a, b}, value(a) - value(b), needs(a) || needs(b));
    }

    Var scale(Var a, double c) {
        auto n = push(Op::scale, {a}, value(a) * c, needs(a));
        nodes_[static_cast<std::size_t>(n.id)].factor = c;
        return n;
    }

    Var tanh(Var a) {
        return push(Op::tanh, {a}, value(a).array().tanh().matrix(), needs(a));
    }

    /// Tangent through tanh: t * (1 - h^2), where h is the tanh output node.
    Var tanh_tangent(Var h, Var t) {
        require_same_shape(h, t, "tanh_tangent");
        Matrix out = (value(t).array() * (1.0 - value(h).array().square())).matrix();
        return push(Op::tanh_tangent, {h, t}, std::move(out), needs(h) || needs(t));
    }

    Var concat_cols(const std::vector<Var> &parts) {
        require(!parts.empty(), "concat_cols: no inputs");
        const Index rows = value(parts.front()).rows();
        Index cols = 0;
        bool grad = false;
        for (const auto p : parts) {
            require(value(p).rows() == rows, "concat_cols: row mismatch");
            cols += value(p).cols();
            grad = grad || needs(p);
        }
        Matrix out(rows, cols);
        Index at = 0;
        for (const auto p : parts) {
            out.middleCols(at, value(p).cols()) = value(p);
            at += value(p).cols();
        }
        return push(Op::concat, parts, std::move(out), grad);
    }

    Var slice_cols(Var a, Index start, Index width) {
        require(start >= 0 && width >= 0 && start + width <= value(a).cols(),
                "slice_cols: out of range");
        return push(Op::slice, {a}, value(a).middleCols(start, width), needs(a), start);
    }

    /// Mean of squared entries, as a 1x1 node.
    Var mean_square(Var a) {
        const auto &v = value(a);
        require(v.size() > 0, "mean_square: empty input");
        Matrix out(1, 1);
        out(0, 0) = v.squaredNorm() / static_cast<double>(v.size());
        return push(Op::mean_square, {a}, std::move(out), needs(a));
    }

    /// sum_r w_r * max(0, d_r)^2 over a column vector d.
    Var weighted_hinge_square(Var d, Eigen::VectorXd weights) {
        const auto &v = value(d);
        require(v.cols() == 1 && v.rows() == weights.size(),
                "weighted_hinge_square: shape mismatch");
        Matrix out(1, 1);
        out(0, 0) = (weights.array() * v.col(0).array().max(0.0).square()).sum();
        auto n = push(Op::weighted_hinge_square, {d}, std::move(out), needs(d));
        nodes_[static_cast<std::size_t>(n.id)].weights = std::move(weights);
        return n;
    }

    [[nodiscard]] const Matrix &value(Var v) const { return node(v).value; }

    [[nodiscard]] double scalar(Var v) const {
        const auto &m = value(v);
        require(m.rows() == 1 && m.cols() == 1, "scalar: node is not 1x1");
        return m(0, 0);
    }

    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

    /// Reverse accumulation from a scalar root. Gradients of earlier calls are discarded.
    void backward(Var root) {
        const auto &rv = value(root);
        if (rv.rows() != 1 || rv.cols() != 1) {
            throw InvalidInput("backward: root must be a scalar (1x1) node");
        }
        for (auto &n : nodes_) {
            n.grad.resize(0, 0);
        }
        nodes_[static_cast<std::size_t>(root.id)].grad = Matrix::Ones(1, 1);
        for (int i = root.id; i >= 0; --i) {
            auto &n = nodes_[static_cast<std::size_t>(i)];
            if (!n.requires_grad || n.grad.size() == 0) {
                continue;
            }
            propagate(n);
        }
    }

    /// Gradient of the last backward root w.r.t. a node; zeros if unreached.
    [[nodiscard]] Matrix grad(Var v) const {
        const auto &n = node(v);
        if (n.grad.size() == 0) {
            return Matrix::Zero(n.value.rows(), n.value.cols());
        }
        return n.grad;
    }

  private:
    enum class Op {
        constant,
        parameter,
        linear_block,
        add_bias,
        add,
        sub,
        scale,
        tanh,
        tanh_tangent,
        concat,
        slice,
        mean_square,
        weighted_hinge_square,
    };

    struct Node {
        Op op = Op::constant;
        std::vector<Var> inputs;
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        Index offset = 0;
        double factor = 0.0;
        Eigen::VectorXd weights;
    };

    Var push(Op op, std::vector<Var> inputs, Matrix value, bool requires_grad, Index offset = 0) {
        Node n;
        n.op = op;
        n.inputs = std::move(inputs);
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.offset = offset;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size() - 1)};
    }

    [[nodiscard]] const Node &node(Var v) const {
        require(v.id >= 0 && static_cast<std::size_t>(v.id) < nodes_.size(), "Tape: invalid Var");
        return nodes_[static_cast<std::size_t>(v.id)];
    }

    [[nodiscard]] bool needs(Var v) const { return node(v).requires_grad; }

    void require_same_shape(Var a, Var b, const char *what) const {
        const auto &x = value(a);
        const auto &y = value(b);
        require(x.rows() == y.rows() && x.cols() == y.cols(),
                std::string(what) + ": shape mismatch");
    }

    Matrix *accum(Var v) {
        auto &n = nodes_[static_cast<std::size_t>(v.id)];
        if (!n.requires_grad) {
            return nullptr;
        }
        if (n.grad.size() == 0) {
            n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
        }
        return &n.grad;
    }

    void propagate(const Node &n) {
        const Matrix &g = n.grad;
        switch (n.op) {
        case Op::constant:
        case Op::parameter:
            break;
        case Op::linear_block: {
            const Var x = n.inputs[0];
            const Var w = n.inputs[1];
            const Index width = value(x).cols();
            if (Matrix *dx = accum(x)) {
                dx->noalias() += g * value(w).middleCols(n.offset, width);
            }
            if (Matrix *dw = accum(w)) {
                dw->middleCols(n.offset, width).noalias() += g.transpose() * value(x);
            }
            break;
        }
        case Op::add_bias:
            if (Matrix *dx = accum(n.inputs[0])) {
                *dx += g;
            }
            if (Matrix *db = accum(n.inputs[1])) {
                *db += g.colwise().sum();
            }
            break;
        case Op::add:
            if (Matrix *da = accum(n.inputs[0])) {
                *da += g;
            }
            if (Matrix *db = accum(n.inputs[1])) {
                *db += g;
            }
            break;
        case Op::sub:
            if (Matrix *da = accum(n.inputs[0])) {
                *da += g;
            }
            if (Matrix *db = accum(n.inputs[1])) {
                *db -= g;
            }
            break;
        case Op::scale:
            if (Matrix *da = accum(n.inputs[0])) {
                *da += n.factor * g;
            }
            break;
        case Op::tanh:
            if (Matrix *da = accum(n.inputs[0])) {
                *da += (g.array() * (1.0 - n.value.array().square())).matrix();
            }
            break;
        case Op::tanh_tangent: {
            const auto &h = value(n.inputs[0]).array();
            const auto &t = value(n.inputs[1]).array();
            if (Matrix *dh = accum(n.inputs[0])) {
                *dh += (-2.0 * g.array() * t * h).matrix();
            }
            if (Matrix *dt = accum(n.inputs[1])) {
                *dt += (g.array() * (1.0 - h.square())).matrix();
            }
            break;
        }
        case Op::concat: {
            Index at = 0;
            for (const auto p : n.inputs) {
                const Index w = value(p).cols();
                if (Matrix *dp = accum(p)) {
                    *dp += g.middleCols(at, w);
                }
                at += w;
            }
            break;
        }
        case Op::slice:
            if (Matrix *da = accum(n.inputs[0])) {
                da->middleCols(n.offset, n.value.cols()) += g;
            }
            break;
        case Op::mean_square:
            if (Matrix *da = accum(n.inputs[0])) {
                const auto &a = value(n.inputs[0]);
                *da += (2.0 * g(0, 0) / static_cast<double>(a.size())) * a;
            }
            break;
        case Op::weighted_hinge_square:
            if (Matrix *dd = accum(n.inputs[0])) {
                const auto &d = value(n.inputs[0]).col(0).array();
                dd->col(0).array() += 2.0 * g(0, 0) * n.weights.array() * d.max(0.0);
            }
            break;
        }
    }

    std::vector<Node> nodes_;
};

/// Per-parameter partials aligned with DenseNetwork::parameters().
struct GradientBundle {
    std::vector<Matrix> partials;
    double global_norm = 0.0;

    static GradientBundle zeros_like(const DenseNetwork &net) {
        GradientBundle g;
        for (const auto *p : net.parameters()) {
            g.partials.push_back(Matrix::Zero(p->rows(), p->cols()));
        }
        return g;
    }

    void update_norm() {
        double s = 0.0;
        for (const auto &p : partials) {
            s += p.squaredNorm();
        }
        global_norm = std::sqrt(s);
    }
};

/// A network whose parameters have been placed on a tape.
struct BoundNetwork {
    const DenseNetwork *net = nullptr;
    std::vector<Var> weights;
    std::vector<Var> biases;
};

/// Places parameters on the tape. With `trainable = false` they are constants.
inline BoundNetwork bind(Tape &tape, const DenseNetwork &net, bool trainable = true) {
    BoundNetwork b;
    b.net = &net;
    for (const auto &layer : net.layers()) {
        b.weights.push_back(trainable ? tape.parameter(layer.weights) : tape.constant(layer.weights));
        b.biases.push_back(trainable ? tape.parameter(layer.bias) : tape.constant(layer.bias));
    }
    return b;
}

/// Reads the parameter partials of a bound network after Tape::backward.
inline GradientBundle gradients(const Tape &tape, const BoundNetwork &b) {
    GradientBundle g;
    for (std::size_t l = 0; l < b.weights.size(); ++l) {
        g.partials.push_back(tape.grad(b.weights[l]));
        g.partials.push_back(tape.grad(b.biases[l]));
    }
    g.update_norm();
    return g;
}

/// A column block of a first-layer input, placed at `offset` inside the input vector.
struct InputBlock {
    Var value;
    Index offset = 0;
};

struct NetworkTrace {
    std::vector<Var> activations; ///< post-activation output of every layer
    [[nodiscard]] Var output() const { return activations.back(); }
};

/// Sum of first-layer affine contributions of the given blocks, without bias.
inline Var first_layer_linear(Tape &tape, const BoundNetwork &b,
                              std::span<const InputBlock> blocks) {
    require(!blocks.empty(), "first_layer_linear: no input blocks");
    Var acc = tape.linear_block(blocks[0].value, b.weights[0], blocks[0].offset);
    for (std::size_t i = 1; i < blocks.size(); ++i) {
        acc = tape.add(acc, tape.linear_block(blocks[i].value, b.weights[0], blocks[i].offset));
    }
    return acc;
}

/// Completes a forward pass from the bias-free first-layer pre-activation.
inline NetworkTrace forward_from_linear(Tape &tape, const BoundNetwork &b, Var linear0) {
    const auto &layers = b.net->layers();
    NetworkTrace trace;
    Var h = linear0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Var pre = l == 0 ? h : tape.linear_block(h, b.weights[l], 0);
        pre = tape.add_bias(pre, b.biases[l]);
        h = layers[l].activation == Activation::tanh ? tape.tanh(pre) : pre;
        trace.activations.push_back(h);
    }
    return trace;
}

/**
 * Recorded forward pass. The blocks must tile the first layer's input; a
 * block that is omitted contributes zero.
 */
inline NetworkTrace forward(Tape &tape, const BoundNetwork &b, std::span<const InputBlock> blocks) {
    return forward_from_linear(tape, b, first_layer_linear(tape, b, blocks));
}

inline NetworkTrace forward(Tape &tape, const BoundNetwork &b, Var input) {
    require(tape.value(input).cols() == b.net->input_width(), "forward: input width mismatch");
    const InputBlock block{input, 0};
    return forward(tape, b, std::span<const InputBlock>(&block, 1));
}

/// Pushes a first-layer (bias-free) tangent through the remaining layers.
inline Var tangent_from_linear(Tape &tape, const BoundNetwork &b, const NetworkTrace &trace,
                               Var linear0) {
    const auto &layers = b.net->layers();
    Var t = linear0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (l > 0) {
            t = tape.linear_block(t, b.weights[l], 0);
        }
        if (layers[l].activation == Activation::tanh) {
            t = tape.tanh_tangent(trace.activations[l], t);
        }
    }
    return t;
}

/**
 * Forward-mode directional derivative of the outputs along an input tangent
 * given as column blocks. Blocks that are absent have zero tangent.
 */
inline Var tangent(Tape &tape, const BoundNetwork &b, const NetworkTrace &trace,
                   std::span<const InputBlock> tangent_blocks) {
    return tangent_from_linear(tape, b, trace, first_layer_linear(tape, b, tangent_blocks));
}

/// Derivative of every output w.r.t. input coordinate `index`, recorded on the tape.
inline Var input_jacobian_row(Tape &tape, const BoundNetwork &b, const NetworkTrace &trace,
                              Index rows, Index index) {
    if (index < 0 || index >= b.net->input_width()) {
        throw InvalidInput("input_jacobian_row: index " + std::to_string(index) +
                           " out of range");
    }
    const InputBlock seed{tape.constant(Matrix::Ones(rows, 1)), index};
    return tangent(tape, b, trace, std::span<const InputBlock>(&seed, 1));
}

/// Convenience form for a single input vector.
inline Eigen::VectorXd input_jacobian_row(const DenseNetwork &net, const Eigen::VectorXd &input,
                                          Index index) {
    require(input.size() == net.input_width(), "input_jacobian_row: input width mismatch");
    Tape tape;
    const auto b = bind(tape, net, false);
    const auto trace = forward(tape, b, tape.constant(input.transpose()));
    return tape.value(input_jacobian_row(tape, b, trace, 1, index)).row(0).transpose();
}

} // namespace qpinn::ad
