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
 * @file quantum.hpp
 * Classical statevector simulation of the data-encoding feature map and the
 * fidelity kernel it induces.
 *
 * One layer of the map applies a Hadamard to every qubit, a single-qubit
 * phase exp(i theta_q Z_q), and ring couplings
 * exp(i (pi - theta_q)(pi - theta_{q+1}) Z_q Z_{q+1}). The layer is repeated
 * `depth` times with the same angles. All gates after the Hadamards are
 * diagonal, so a layer is a Walsh-Hadamard transform followed by a
 * precomputed phase vector.
 */

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "parallel.hpp"

namespace qpinn::quantum {

using Complex = std::complex<double>;

inline constexpr int max_qubits = 20;

struct FeatureMapSpec {
    int n_qubits = 8;
    int depth = 2;
    bool ring_entanglement = true;

    void validate() const {
        require(n_qubits >= 1, "FeatureMapSpec: n_qubits must be >= 1");
        require(n_qubits <= max_qubits,
                "FeatureMapSpec: n_qubits must be <= " + std::to_string(max_qubits));
        require(depth >= 1, "FeatureMapSpec: depth must be >= 1");
    }

    [[nodiscard]] std::size_t dimension() const { return std::size_t{1} << n_qubits; }

    /// Qubit that receives feature index j.
    [[nodiscard]] int qubit_for(std::size_t feature) const {
        return static_cast<int>(feature % static_cast<std::size_t>(n_qubits));
    }

    /// Coupled qubit pairs. A two-qubit ring has a single edge.
    [[nodiscard]] std::vector<std::pair<int, int>> edges() const {
        std::vector<std::pair<int, int>> out;
        if (!ring_entanglement || n_qubits < 2) {
            return out;
        }
        if (n_qubits == 2) {
            out.emplace_back(0, 1);
            return out;
        }
        for (int q = 0; q < n_qubits; ++q) {
            out.emplace_back(q, (q + 1) % n_qubits);
        }
        return out;
    }

    bool operator==(const FeatureMapSpec &) const = default;
};

/// Rotation angles in [0, pi], one per input feature.
struct ScaledFeatures {
    std::vector<double> angles;

    [[nodiscard]] std::size_t size() const noexcept { return angles.size(); }
};

/**
 * Min-max scaler fitted on training rows. Maps feature j to
 * pi * (x_j - min_j) / (max_j - min_j), clamped to [0, pi]. Columns with a
 * degenerate range map to pi/2. A range below 1e-10 of the column magnitude
 * counts as degenerate, so rounding noise in a constant statistic is not
 * stretched over the whole angle interval.
 */
class MinMaxScaler {
  public:
    MinMaxScaler() = default;
    MinMaxScaler(std::vector<double> min, std::vector<double> max)
        : min_(std::move(min)), max_(std::move(max)) {
        require(min_.size() == max_.size(), "MinMaxScaler: min/max length mismatch");
    }

    template <typename Rows> static MinMaxScaler fit(const Rows &rows) {
        require(!rows.empty(), "MinMaxScaler::fit: no rows");
        const std::size_t d = rows.front().size();
        std::vector<double> lo(d, INFINITY);
        std::vector<double> hi(d, -INFINITY);
        for (const auto &row : rows) {
            require(row.size() == d, "MinMaxScaler::fit: ragged rows");
            for (std::size_t j = 0; j < d; ++j) {
                lo[j] = std::min(lo[j], static_cast<double>(row[j]));
                hi[j] = std::max(hi[j], static_cast<double>(row[j]));
            }
        }
        return MinMaxScaler(std::move(lo), std::move(hi));
    }

    [[nodiscard]] bool fitted() const noexcept { return !min_.empty(); }
    [[nodiscard]] std::size_t dimension() const noexcept { return min_.size(); }

    [[nodiscard]] bool degenerate(std::size_t j) const {
        const double range = max_[j] - min_[j];
        return !(range > relative_tolerance * std::max(std::abs(min_[j]), std::abs(max_[j])));
    }

    static constexpr double relative_tolerance = 1e-10;
    [[nodiscard]] const std::vector<double> &min() const noexcept { return min_; }
    [[nodiscard]] const std::vector<double> &max() const noexcept { return max_; }

    /// Position of x_j inside the training range, clamped to [0, 1].
    template <typename Vec> [[nodiscard]] std::vector<double> unit(const Vec &x) const {
        require(fitted(), "MinMaxScaler: not fitted");
        require(static_cast<std::size_t>(x.size()) == dimension(),
                "MinMaxScaler: expected " + std::to_string(dimension()) +
                    " features, got " + std::to_string(x.size()));
        std::vector<double> out(dimension());
        for (std::size_t j = 0; j < dimension(); ++j) {
            if (degenerate(j)) {
                out[j] = 0.5;
                continue;
            }
            out[j] = std::clamp((static_cast<double>(x[j]) - min_[j]) / (max_[j] - min_[j]), 0.0, 1.0);
        }
        return out;
    }

    template <typename Vec> [[nodiscard]] ScaledFeatures scale(const Vec &x) const {
        ScaledFeatures out{unit(x)};
        for (double &a : out.angles) {
            a *= std::numbers::pi;
        }
        return out;
    }

    bool operator==(const MinMaxScaler &) const = default;

  private:
    std::vector<double> min_;
    std::vector<double> max_;
};

struct Statevector {
    std::vector<Complex> amplitudes;

    [[nodiscard]] std::size_t size() const noexcept { return amplitudes.size(); }

    [[nodiscard]] double norm_squared() const {
        double s = 0.0;
        for (const auto &a : amplitudes) {
            s += std::norm(a);
        }
        return s;
    }
};

namespace detail {

inline void walsh_hadamard(std::vector<Complex> &amps) {
    const std::size_t dim = amps.size();
    const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    for (std::size_t half = 1; half < dim; half <<= 1) {
        for (std::size_t block = 0; block < dim; block += 2 * half) {
            for (std::size_t k = block; k < block + half; ++k) {
                const Complex a = amps[k];
                const Complex b = amps[k + half];
                amps[k] = (a + b) * inv_sqrt2;
                amps[k + half] = (a - b) * inv_sqrt2;
            }
        }
    }
}

} // namespace detail

/// Per-qubit angle sums under round-robin assignment of features to qubits.
inline std::vector<double> qubit_angles(const FeatureMapSpec &spec, const ScaledFeatures &a) {
    std::vector<double> theta(static_cast<std::size_t>(spec.n_qubits), 0.0);
    for (std::size_t j = 0; j < a.size(); ++j) {
        theta[static_cast<std::size_t>(spec.qubit_for(j))] += a.angles[j];
    }
    return theta;
}

/// Prepares U(x)|0...0> for the given scaled features.
inline Statevector encode_state(const FeatureMapSpec &spec, const ScaledFeatures &a) {
    spec.validate();
    require(a.size() > 0, "encode_state: empty feature vector");
    const std::size_t dim = spec.dimension();
    const auto theta = qubit_angles(spec, a);
    const auto edges = spec.edges();

    // Diagonal of the phase block; z_q = +1 for bit q clear, -1 for bit q set.
    std::vector<Complex> phase(dim);
    for (std::size_t b = 0; b < dim; ++b) {
        double angle = 0.0;
        for (int q = 0; q < spec.n_qubits; ++q) {
            const double z = ((b >> q) & 1U) != 0U ? -1.0 : 1.0;
            angle += theta[static_cast<std::size_t>(q)] * z;
        }
        for (const auto &[p, q] : edges) {
            const double zp = ((b >> p) & 1U) != 0U ? -1.0 : 1.0;
            const double zq = ((b >> q) & 1U) != 0U ? -1.0 : 1.0;
            const double coupling = (std::numbers::pi - theta[static_cast<std::size_t>(p)]) *
                                    (std::numbers::pi - theta[static_cast<std::size_t>(q)]);
            angle += coupling * zp * zq;
        }
        phase[b] = std::polar(1.0, angle);
    }

    Statevector state{std::vector<Complex>(dim, Complex{0.0, 0.0})};
    state.amplitudes[0] = 1.0;
    for (int layer = 0; layer < spec.depth; ++layer) {
        detail::walsh_hadamard(state.amplitudes);
        for (std::size_t b = 0; b < dim; ++b) {
            state.amplitudes[b] *= phase[b];
        }
    }
    const double norm = std::sqrt(state.norm_squared());
    for (auto &amp : state.amplitudes) {
        amp /= norm;
    }
    return state;
}

/**
 * |<a|b>|^2. Written in real arithmetic so that swapping the arguments only
 * negates the imaginary partial sums, which makes the result exactly
 * symmetric.
 */
inline double fidelity(const Statevector &sa, const Statevector &sb) {
    require(sa.size() == sb.size(), "fidelity: statevector dimension mismatch");
    double re = 0.0;
    double im = 0.0;
    for (std::size_t k = 0; k < sa.size(); ++k) {
        const double ar = sa.amplitudes[k].real();
        const double ai = sa.amplitudes[k].imag();
        const double br = sb.amplitudes[k].real();
        const double bi = sb.amplitudes[k].imag();
        re += ar * br + ai * bi;
        im += ar * bi - ai * br;
    }
    return re * re + im * im;
}

inline std::vector<Statevector> encode_all(const FeatureMapSpec &spec,
                                           const std::vector<ScaledFeatures> &xs) {
    std::vector<Statevector> states(xs.size());
    parallel_for(xs.size(), [&](std::size_t i) { states[i] = encode_state(spec, xs[i]); });
    return states;
}

/// Fidelity matrix between two state lists, rows = `rows`, columns = `cols`.
inline Eigen::MatrixXd cross_fidelity(const std::vector<Statevector> &rows,
                                      const std::vector<Statevector> &cols) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                        static_cast<Eigen::Index>(cols.size()));
    parallel_for(rows.size(), [&](std::size_t i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                fidelity(rows[i], cols[j]);
        }
    });
    return out;
}

/// Symmetric Gram matrix of already-encoded states. Upper triangle computed, mirrored.
inline Eigen::MatrixXd gram_of_states(const std::vector<Statevector> &states) {
    require(!states.empty(), "gram: empty input");
    const auto n = static_cast<Eigen::Index>(states.size());
    Eigen::MatrixXd k(n, n);
    parallel_for(states.size(), [&](std::size_t ui) {
        const auto i = static_cast<Eigen::Index>(ui);
        for (Eigen::Index j = i; j < n; ++j) {
            k(i, j) = fidelity(states[ui], states[static_cast<std::size_t>(j)]);
        }
    });
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < i; ++j) {
            k(i, j) = k(j, i);
        }
    }
    return k;
}

inline Eigen::MatrixXd gram(const FeatureMapSpec &spec, const std::vector<ScaledFeatures> &xs) {
    require(!xs.empty(), "gram: empty input");
    return gram_of_states(encode_all(spec, xs));
}

} // namespace qpinn::quantum
