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

#include <cmath>
#include <span>
#include <vector>

#include "autodiff.hpp"
#include "error.hpp"

namespace qpinn::ad {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 1.0; ///< global-norm threshold; <= 0 disables clipping
};

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    long step = 0;
};

struct StepOutcome {
    bool applied = false;
    double grad_norm = 0.0; ///< global norm before clipping
    double scale = 1.0;     ///< clipping factor applied to the raw gradients
};

/**
 * One Adam update over a parameter group. Order: global-norm clipping of the
 * raw gradients, then coupled weight decay (decay * param added to the
 * gradient), then the bias-corrected moment update. Non-finite gradients
 * leave parameters and state untouched.
 */
inline StepOutcome adam_step(std::span<Matrix *const> params, std::span<const Matrix> grads,
                             AdamState &state, double lr, double weight_decay,
                             const AdamHyper &hyper = {}) {
    require(params.size() == grads.size(), "adam_step: parameter/gradient count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        require(params[i]->rows() == grads[i].rows() && params[i]->cols() == grads[i].cols(),
                "adam_step: gradient shape mismatch");
    }
    if (state.m.empty()) {
        for (const auto *p : params) {
            state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
            state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
        }
    }
    require(state.m.size() == params.size(), "adam_step: optimizer state does not match group");

    StepOutcome out;
    double sq = 0.0;
    for (const auto &g : grads) {
        sq += g.squaredNorm();
    }
    out.grad_norm = std::sqrt(sq);
    if (!std::isfinite(out.grad_norm)) {
        return out;
    }
    if (hyper.clip_norm > 0.0 && out.grad_norm > hyper.clip_norm) {
        out.scale = hyper.clip_norm / out.grad_norm;
    }

    ++state.step;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix &p = *params[i];
        const Matrix g = out.scale * grads[i] + weight_decay * p;
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g.cwiseProduct(g);
        const auto m_hat = state.m[i].array() / bc1;
        const auto v_hat = state.v[i].array() / bc2;
        p.array() -= lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
    out.applied = true;
    return out;
}

} // namespace qpinn::ad
