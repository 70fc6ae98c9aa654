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
#include <string>

#include <Eigen/Dense>

#include "error.hpp"

namespace qpinn::linalg {

struct SymmetricEigen {
    Eigen::VectorXd values;  ///< unsorted, aligned with the columns of `vectors`
    Eigen::MatrixXd vectors; ///< orthonormal columns
    int sweeps = 0;
};

inline double off_diagonal_norm(const Eigen::MatrixXd &a) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            if (i != j) {
                s += a(i, j) * a(i, j);
            }
        }
    }
    return std::sqrt(s);
}

/**
 * Cyclic Jacobi eigendecomposition of a symmetric matrix. Sweeps over all
 * (p, q) pairs in row order until the off-diagonal Frobenius norm drops below
 * `tolerance_per_dim * n`.
 */
inline SymmetricEigen jacobi_eigen(Eigen::MatrixXd a, double tolerance_per_dim = 1e-12,
                                   int max_sweeps = 100) {
    require(a.rows() == a.cols(), "jacobi_eigen: matrix must be square");
    const Eigen::Index n = a.rows();
    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
    const double tolerance = tolerance_per_dim * static_cast<double>(n);

    int sweep = 0;
    for (; sweep <= max_sweeps; ++sweep) {
        if (off_diagonal_norm(a) < tolerance) {
            break;
        }
        if (sweep == max_sweeps) {
            throw NumericalFault("jacobi_eigen: no convergence after " +
                                 std::to_string(max_sweeps) + " sweeps");
        }
        for (Eigen::Index p = 0; p < n - 1; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) {
                    continue;
                }
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                // A <- A J, then A <- J^T A, with J = [[c, s], [-s, c]] on (p, q).
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    return SymmetricEigen{a.diagonal(), std::move(v), sweep};
}

inline double max_asymmetry(const Eigen::MatrixXd &a) {
    return (a - a.transpose()).cwiseAbs().maxCoeff();
}

} // namespace qpinn::linalg
