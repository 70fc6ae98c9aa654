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
 * @file nystrom.hpp
 * Fixed low-rank embedding psi(x) = K(x, S) K(S, S)^{-1/2} built from a set
 * of landmark training samples S.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "jacobi.hpp"
#include "quantum.hpp"
#include "random.hpp"

namespace qpinn::nystrom {

using quantum::FeatureMapSpec;
using quantum::ScaledFeatures;
using quantum::Statevector;

enum class LandmarkMethod { farthest_point, uniform };

inline std::string to_string(LandmarkMethod m) {
    return m == LandmarkMethod::farthest_point ? "farthest-point" : "uniform";
}

inline LandmarkMethod landmark_method_from_string(const std::string &s) {
    if (s == "farthest-point" || s == "farthest_point") {
        return LandmarkMethod::farthest_point;
    }
    if (s == "uniform") {
        return LandmarkMethod::uniform;
    }
    throw InvalidInput("unknown landmark method '" + s + "'");
}

/// A training sample available for landmark selection.
struct Sample {
    std::string id;
    ScaledFeatures x;
};

struct LandmarkSet {
    std::vector<std::string> ids;
    std::vector<ScaledFeatures> landmarks;
    std::uint64_t selection_seed = 0;
    LandmarkMethod selection_method = LandmarkMethod::farthest_point;

    [[nodiscard]] std::size_t size() const noexcept { return landmarks.size(); }
};

inline double squared_distance(const ScaledFeatures &a, const ScaledFeatures &b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double d = a.angles[j] - b.angles[j];
        s += d * d;
    }
    return s;
}

/**
 * Chooses M landmarks from the training samples. Samples are first ordered by
 * identifier so the result does not depend on input order; ties in the
 * farthest-point criterion go to the smaller identifier.
 */
inline LandmarkSet select_landmarks(const std::vector<Sample> &train, std::size_t m,
                                    std::uint64_t seed, LandmarkMethod method,
                                    Diagnostics *diag = nullptr) {
    if (train.empty()) {
        throw InvalidInput("select_landmarks: empty training set");
    }
    require(m >= 1, "select_landmarks: M must be >= 1");
    if (m > train.size()) {
        if (diag != nullptr) {
            diag->warn("select_landmarks: M=" + std::to_string(m) + " exceeds training size " +
                       std::to_string(train.size()) + "; reduced");
        }
        m = train.size();
    }

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return train[a].id < train[b].id; });

    Rng rng(seed);
    std::vector<std::size_t> chosen;
    chosen.reserve(m);

    if (method == LandmarkMethod::uniform) {
        auto pool = order;
        for (std::size_t i = 0; i < m; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
            std::swap(pool[i], pool[j]);
            chosen.push_back(pool[i]);
        }
    } else {
        const std::size_t n = order.size();
        std::vector<bool> taken(n, false);
        std::vector<double> min_dist(n, INFINITY);
        std::size_t current = static_cast<std::size_t>(rng.below(n));
        for (std::size_t step = 0; step < m; ++step) {
            taken[current] = true;
            chosen.push_back(order[current]);
            const auto &c = train[order[current]].x;
            std::size_t best = n;
            double best_dist = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (taken[i]) {
                    continue;
                }
                min_dist[i] = std::min(min_dist[i], squared_distance(train[order[i]].x, c));
                if (min_dist[i] > best_dist) {
                    best_dist = min_dist[i];
                    best = i;
                }
            }
            current = best;
        }
    }

    LandmarkSet out;
    out.selection_seed = seed;
    out.selection_method = method;
    for (const auto idx : chosen) {
        out.ids.push_back(train[idx].id);
        out.landmarks.push_back(train[idx].x);
    }
    return out;
}

struct WhiteningMatrix {
    Eigen::MatrixXd matrix;
    double eigen_floor = 1e-8;
    int effective_rank = 0;
};

/// Symmetric inverse square root with eigenvalues clamped from below at `floor`.
inline WhiteningMatrix whiten(const Eigen::MatrixXd &k_ss, double floor = 1e-8) {
    require(k_ss.rows() == k_ss.cols() && k_ss.rows() > 0, "whiten: matrix must be square");
    require(floor > 0.0, "whiten: eigen floor must be positive");
    if (linalg::max_asymmetry(k_ss) > 1e-8) {
        throw InvalidInput("whiten: landmark Gram matrix is not symmetric");
    }
    const auto eig = linalg::jacobi_eigen(k_ss);
    const Eigen::Index m = k_ss.rows();
    Eigen::VectorXd inv_sqrt(m);
    int rank = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double lambda = eig.values(i);
        if (lambda >= floor) {
            ++rank;
        }
        inv_sqrt(i) = 1.0 / std::sqrt(std::max(lambda, floor));
    }
    const Eigen::MatrixXd scaled = eig.vectors * inv_sqrt.asDiagonal();
    Eigen::MatrixXd w(m, m);
    for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index i = 0; i <= j; ++i) {
            const double v = scaled.row(i).dot(eig.vectors.row(j));
            w(i, j) = v;
            w(j, i) = v;
        }
    }
    return WhiteningMatrix{std::move(w), floor, rank};
}

struct QuantumEmbedding {
    Eigen::VectorXd values;
};

/// Immutable once constructed; safe for concurrent read-only use.
class NystromEmbedder {
  public:
    NystromEmbedder() = default;

    NystromEmbedder(FeatureMapSpec spec, LandmarkSet landmarks, WhiteningMatrix whitening)
        : spec_(spec), landmarks_(std::move(landmarks)), whitening_(std::move(whitening)) {
        spec_.validate();
        require(landmarks_.size() > 0, "NystromEmbedder: no landmarks");
        require(static_cast<std::size_t>(whitening_.matrix.rows()) == landmarks_.size() &&
                    whitening_.matrix.rows() == whitening_.matrix.cols(),
                "NystromEmbedder: whitening shape does not match landmark count");
        landmark_states_ = quantum::encode_all(spec_, landmarks_.landmarks);
    }

    static NystromEmbedder fit(const FeatureMapSpec &spec, const std::vector<Sample> &train,
                               std::size_t m, std::uint64_t seed, LandmarkMethod method,
                               double floor = 1e-8, Diagnostics *diag = nullptr) {
        auto landmarks = select_landmarks(train, m, seed, method, diag);
        const auto states = quantum::encode_all(spec, landmarks.landmarks);
        auto w = whiten(quantum::gram_of_states(states), floor);
        return NystromEmbedder(spec, std::move(landmarks), std::move(w));
    }

    [[nodiscard]] bool fitted() const noexcept { return !landmark_states_.empty(); }
    [[nodiscard]] std::size_t dimension() const noexcept { return landmarks_.size(); }
    [[nodiscard]] const FeatureMapSpec &spec() const noexcept { return spec_; }
    [[nodiscard]] const LandmarkSet &landmarks() const noexcept { return landmarks_; }
    [[nodiscard]] const WhiteningMatrix &whitening() const noexcept { return whitening_; }

    /// Fidelities of x against every landmark.
    [[nodiscard]] Eigen::RowVectorXd kernel_row(const ScaledFeatures &x) const {
        require_fitted();
        const auto state = quantum::encode_state(spec_, x);
        Eigen::RowVectorXd row(static_cast<Eigen::Index>(dimension()));
        for (std::size_t m = 0; m < dimension(); ++m) {
            row(static_cast<Eigen::Index>(m)) = quantum::fidelity(state, landmark_states_[m]);
        }
        return row;
    }

    [[nodiscard]] QuantumEmbedding embed(const ScaledFeatures &x) const {
        const Eigen::RowVectorXd psi = kernel_row(x) * whitening_.matrix;
        check_finite(psi);
        return QuantumEmbedding{psi.transpose()};
    }

    /// Embeds many inputs at once; row i is psi(xs[i]).
    [[nodiscard]] Eigen::MatrixXd embed_all(const std::vector<ScaledFeatures> &xs) const {
        require_fitted();
        const auto states = quantum::encode_all(spec_, xs);
        Eigen::MatrixXd psi = quantum::cross_fidelity(states, landmark_states_) * whitening_.matrix;
        check_finite(psi);
        return psi;
    }

  private:
    void require_fitted() const {
        if (!fitted()) {
            throw InvalidInput("NystromEmbedder: embedder is not fitted");
        }
    }

    template <typename M> static void check_finite(const M &values) {
        if (!values.allFinite()) {
            throw NumericalFault("NystromEmbedder: non-finite embedding");
        }
    }

    FeatureMapSpec spec_{};
    LandmarkSet landmarks_{};
    WhiteningMatrix whitening_{};
    std::vector<Statevector> landmark_states_{};
};

} // namespace qpinn::nystrom
