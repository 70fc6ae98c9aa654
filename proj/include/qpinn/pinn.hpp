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
 * @file pinn.hpp
 * Physics-informed SOH model over the hybrid input
 * z = [psi_q(x), enc(x), t], with solution network F, dynamics network G
 * and residual H = u_t - G(z, u, u_t, u_x).
 *
 * psi_q is a fixed Nystrom embedding: it enters every tape as a constant,
 * so it receives no parameter gradient and contributes nothing to u_x. The
 * derivative u_x flows through the encoder branch only.
 */

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "adam.hpp"
#include "autodiff.hpp"
#include "data.hpp"
#include "error.hpp"
#include "nystrom.hpp"
#include "quantum.hpp"
#include "random.hpp"

namespace qpinn::pinn {

using ad::Index;
using ad::Matrix;

enum class Variant { qpinn, pinn_baseline, mlp_baseline };

inline std::string to_string(Variant v) {
    switch (v) {
    case Variant::qpinn:
        return "qpinn";
    case Variant::pinn_baseline:
        return "pinn_baseline";
    case Variant::mlp_baseline:
        return "mlp_baseline";
    }
    return "unknown";
}

inline Variant variant_from_string(const std::string &s) {
    if (s == "qpinn") {
        return Variant::qpinn;
    }
    if (s == "pinn_baseline") {
        return Variant::pinn_baseline;
    }
    if (s == "mlp_baseline") {
        return Variant::mlp_baseline;
    }
    throw InvalidInput("unknown variant '" + s + "'");
}

struct Architecture {
    std::vector<Index> solution_hidden{64, 64};
    std::vector<Index> dynamics_hidden{64, 64};
    std::vector<Index> encoder_hidden{32};
    Index encoder_output = 16;

    bool operator==(const Architecture &) const = default;
};

struct QuantumConfig {
    quantum::FeatureMapSpec feature_map{};
    std::size_t landmarks = 256;
    double eigen_floor = 1e-8;
    nystrom::LandmarkMethod landmark_method = nystrom::LandmarkMethod::farthest_point;
    std::uint64_t landmark_seed = 0;
};

struct FineTuneConfig {
    int epochs = 100;
    double lr = 5e-4;
    bool freeze_dynamics = true;

    bool operator==(const FineTuneConfig &) const = default;
};

struct TrainConfig {
    int epochs = 300;
    double lr = 1e-3;
    double plateau_factor = 0.1;
    int plateau_patience = 50;
    double plateau_threshold = 1e-6;
    double weight_decay = 1e-5;
    double clip_norm = 1.0;
    double alpha = 0.7;
    double beta = 0.2;
    int batch_size = 256;
    int block_length = 32; ///< consecutive cycles of one cell kept together in a batch
    std::uint64_t seed = 0;
    FineTuneConfig fine_tune{};

    void validate() const {
        require(epochs >= 0, "TrainConfig: epochs must be >= 0");
        require(lr > 0.0 && plateau_factor > 0.0 && weight_decay >= 0.0 && clip_norm > 0.0,
                "TrainConfig: rates must be positive");
        require(alpha >= 0.0 && beta >= 0.0, "TrainConfig: loss weights must be >= 0");
        require(plateau_patience >= 1, "TrainConfig: patience must be >= 1");
        require(batch_size >= 1 && block_length >= 1, "TrainConfig: batch sizes must be >= 1");
        require(fine_tune.epochs >= 0 && fine_tune.lr > 0.0, "TrainConfig: invalid fine-tune");
    }

    bool operator==(const TrainConfig &) const = default;
};

struct LossBreakdown {
    double data_term = 0.0;
    double pde_term = 0.0;
    double mono_term = 0.0;
    double total = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
};

/// total = data + alpha * pde + beta * mono
inline LossBreakdown total_loss(double data_term, double pde_term, double mono_term, double alpha,
                                double beta) {
    LossBreakdown out{data_term, pde_term, mono_term, 0.0, alpha, beta};
    out.total = data_term + alpha * pde_term + beta * mono_term;
    return out;
}

inline double loss_data(std::span<const double> predictions, std::span<const double> labels) {
    require(predictions.size() == labels.size(), "loss_data: length mismatch");
    if (predictions.empty()) {
        throw InvalidInput("loss_data: empty batch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double d = predictions[i] - labels[i];
        s += d * d;
    }
    return s / static_cast<double>(labels.size());
}

/**
 * (1/N) sum_k max(0, next[k] - current[k])^2 over the N-1 forward pairs,
 * where current[k] = u(t_k, x_k) and next[k] = u(t_{k+1}, x_k).
 */
inline double monotonicity_penalty(std::span<const double> current, std::span<const double> next,
                                   std::size_t n) {
    require(current.size() == next.size(), "monotonicity_penalty: length mismatch");
    require(n >= 1, "monotonicity_penalty: N must be >= 1");
    double s = 0.0;
    for (std::size_t k = 0; k < current.size(); ++k) {
        const double d = std::max(0.0, next[k] - current[k]);
        s += d * d;
    }
    return s / static_cast<double>(n);
}

/// The penalty for a sequence u(t_k) at fixed features.
inline double monotonicity_penalty(std::span<const double> u) {
    if (u.size() < 2) {
        return 0.0;
    }
    return monotonicity_penalty(u.first(u.size() - 1), u.subspan(1), u.size());
}

struct QpinnModel {
    int format_version = 1;
    Variant variant = Variant::qpinn;
    Architecture architecture{};
    quantum::MinMaxScaler scaler{};
    double t_scale = 1.0; ///< cycle index divisor
    std::optional<nystrom::NystromEmbedder> embedder;
    ad::DenseNetwork solution;
    ad::DenseNetwork dynamics;
    ad::DenseNetwork encoder; ///< empty for mlp_baseline
    TrainConfig config{};
    std::string source_tag;
    std::string target_tag;

    [[nodiscard]] Index feature_dim() const { return static_cast<Index>(scaler.dimension()); }
    [[nodiscard]] Index psi_width() const {
        return embedder ? static_cast<Index>(embedder->dimension()) : 0;
    }
    [[nodiscard]] bool has_encoder() const { return variant != Variant::mlp_baseline; }
    /// Width of the x-dependent trainable block of z (encoder output, or raw x for the MLP).
    [[nodiscard]] Index x_block_width() const {
        return has_encoder() ? architecture.encoder_output : feature_dim();
    }
    [[nodiscard]] Index x_block_offset() const { return psi_width(); }
    [[nodiscard]] Index t_offset() const { return psi_width() + x_block_width(); }
    [[nodiscard]] Index z_width() const { return t_offset() + 1; }
    [[nodiscard]] double scale_time(long cycle_index) const {
        return static_cast<double>(cycle_index) / t_scale;
    }

    void validate() const {
        require(scaler.fitted(), "QpinnModel: scaler not fitted");
        require(t_scale > 0.0, "QpinnModel: t_scale must be positive");
        require((variant == Variant::qpinn) == embedder.has_value(),
                "QpinnModel: embedder presence does not match variant");
        if (embedder) {
            require(embedder->fitted(), "QpinnModel: embedder not fitted");
            require(embedder->landmarks().landmarks.front().size() == scaler.dimension(),
                    "QpinnModel: embedder feature width mismatch");
        }
        require(solution.input_width() == z_width() && solution.output_width() == 1,
                "QpinnModel: solution network shape mismatch");
        require(dynamics.input_width() == z_width() + 2 + feature_dim() &&
                    dynamics.output_width() == 1,
                "QpinnModel: dynamics network shape mismatch");
        if (has_encoder()) {
            require(encoder.input_width() == feature_dim() &&
                        encoder.output_width() == architecture.encoder_output,
                    "QpinnModel: encoder shape mismatch");
        }
    }
};

inline std::string sample_id(const std::string &cell, long cycle) {
    std::string n = std::to_string(cycle);
    if (n.size() < 8) {
        n.insert(0, 8 - n.size(), '0');
    }
    return cell + "/" + n;
}

/**
 * Fits the scaler (and, for qpinn, the embedder) on training rows and
 * initializes the networks.
 */
inline QpinnModel make_model(Variant variant, const Architecture &arch,
                             const std::vector<data::FeatureRow> &train, const QuantumConfig &qc,
                             double t_scale, std::uint64_t seed, Diagnostics *diag = nullptr) {
    require(!train.empty(), "make_model: empty training split");
    QpinnModel model;
    model.variant = variant;
    model.architecture = arch;
    model.t_scale = t_scale;
    std::vector<std::vector<double>> xs;
    xs.reserve(train.size());
    for (const auto &r : train) {
        xs.push_back(r.x);
    }
    model.scaler = quantum::MinMaxScaler::fit(xs);
    if (variant == Variant::qpinn) {
        std::vector<nystrom::Sample> samples;
        samples.reserve(train.size());
        for (const auto &r : train) {
            samples.push_back({sample_id(r.cell_id, r.cycle_index), model.scaler.scale(r.x)});
        }
        model.embedder = nystrom::NystromEmbedder::fit(qc.feature_map, samples, qc.landmarks,
                                                       qc.landmark_seed, qc.landmark_method,
                                                       qc.eigen_floor, diag);
    }
    Rng rng(derive_seed(seed, 0x51ULL));
    const Index d = model.feature_dim();
    auto widths = [](Index in, const std::vector<Index> &hidden, Index out) {
        std::vector<Index> w{in};
        w.insert(w.end(), hidden.begin(), hidden.end());
        w.push_back(out);
        return w;
    };
    if (model.has_encoder()) {
        model.encoder = ad::DenseNetwork::xavier(widths(d, arch.encoder_hidden, arch.encoder_output), rng);
    }
    model.solution = ad::DenseNetwork::xavier(widths(model.z_width(), arch.solution_hidden, 1), rng);
    model.dynamics = ad::DenseNetwork::xavier(
        widths(model.z_width() + 2 + d, arch.dynamics_hidden, 1), rng);
    model.validate();
    return model;
}

/// Rows prepared for a fitted model: sorted by (cell, cycle) with constant inputs precomputed.
struct PreparedSet {
    struct CellRange {
        std::string cell_id;
        std::size_t begin = 0;
        std::size_t end = 0;
    };

    std::vector<std::string> cell_of_row;
    std::vector<long> cycle_of_row;
    Matrix x_unit; ///< N x d, features scaled to [0, 1]
    Matrix psi;    ///< N x M, fixed embedding (empty when no embedder)
    Eigen::VectorXd t;
    Eigen::VectorXd y;
    std::vector<CellRange> cells;

    [[nodiscard]] std::size_t size() const noexcept { return cell_of_row.size(); }
};

inline PreparedSet prepare(const QpinnModel &model, std::vector<data::FeatureRow> rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const auto &a, const auto &b) {
        return a.cell_id != b.cell_id ? a.cell_id < b.cell_id : a.cycle_index < b.cycle_index;
    });
    PreparedSet set;
    const auto n = static_cast<Index>(rows.size());
    set.x_unit.resize(n, model.feature_dim());
    set.t.resize(n);
    set.y.resize(n);
    std::vector<quantum::ScaledFeatures> angles;
    for (Index i = 0; i < n; ++i) {
        const auto &r = rows[static_cast<std::size_t>(i)];
        const auto unit = model.scaler.unit(r.x);
        for (Index j = 0; j < model.feature_dim(); ++j) {
            set.x_unit(i, j) = unit[static_cast<std::size_t>(j)];
        }
        set.t(i) = model.scale_time(r.cycle_index);
        set.y(i) = r.soh;
        set.cell_of_row.push_back(r.cell_id);
        set.cycle_of_row.push_back(r.cycle_index);
        if (model.embedder) {
            angles.push_back(model.scaler.scale(r.x));
        }
        if (set.cells.empty() || set.cells.back().cell_id != r.cell_id) {
            set.cells.push_back({r.cell_id, static_cast<std::size_t>(i), static_cast<std::size_t>(i)});
        }
        set.cells.back().end = static_cast<std::size_t>(i) + 1;
    }
    if (model.embedder && n > 0) {
        set.psi = model.embedder->embed_all(angles);
    }
    return set;
}

// ---------------------------------------------------------------------------
// Recorded batch evaluation

struct BoundModel {
    ad::BoundNetwork solution;
    ad::BoundNetwork dynamics;
    ad::BoundNetwork encoder;
};

inline BoundModel bind_model(ad::Tape &tape, const QpinnModel &m, bool trainable = true,
                             bool dynamics_trainable = true) {
    BoundModel b;
    b.solution = ad::bind(tape, m.solution, trainable);
    b.dynamics = ad::bind(tape, m.dynamics, trainable && dynamics_trainable);
    if (m.has_encoder()) {
        b.encoder = ad::bind(tape, m.encoder, trainable);
    }
    return b;
}

/// A batch of rows of a PreparedSet plus its monotonicity pairing.
struct Batch {
    std::vector<std::size_t> rows;
    std::vector<double> t_next;      ///< t of the paired next row (own t when unpaired)
    std::vector<double> mono_weight; ///< 1 / (N_cell * cells_in_batch) on paired rows, else 0
    std::size_t cells = 0;
};

/**
 * Builds a batch from row blocks. Rows r and r+1 of the same block form a
 * monotonicity pair. N for each cell is the number of its rows in the batch,
 * and the per-cell penalties are averaged over the cells present.
 */
inline Batch make_batch(const PreparedSet &set, const std::vector<std::vector<std::size_t>> &blocks) {
    Batch b;
    std::vector<std::string> cell_names;
    std::vector<std::size_t> cell_count;
    std::vector<std::size_t> cell_slot;
    std::vector<bool> paired;
    for (const auto &block : blocks) {
        for (std::size_t i = 0; i < block.size(); ++i) {
            const auto r = block[i];
            b.rows.push_back(r);
            const bool has_next = i + 1 < block.size() &&
                                  set.cell_of_row[block[i + 1]] == set.cell_of_row[r];
            b.t_next.push_back(has_next ? set.t(static_cast<Index>(block[i + 1]))
                                        : set.t(static_cast<Index>(r)));
            paired.push_back(has_next);
            std::size_t slot = 0;
            while (slot < cell_names.size() && cell_names[slot] != set.cell_of_row[r]) {
                ++slot;
            }
            if (slot == cell_names.size()) {
                cell_names.push_back(set.cell_of_row[r]);
                cell_count.push_back(0);
            }
            ++cell_count[slot];
            cell_slot.push_back(slot);
        }
    }
    b.cells = cell_names.size();
    b.mono_weight.resize(b.rows.size(), 0.0);
    for (std::size_t i = 0; i < b.rows.size(); ++i) {
        if (paired[i]) {
            b.mono_weight[i] = 1.0 / (static_cast<double>(cell_count[cell_slot[i]]) *
                                      static_cast<double>(b.cells));
        }
    }
    return b;
}

struct BatchGraph {
    ad::Var u;
    ad::Var u_t;
    std::vector<ad::Var> u_x;
    ad::Var g;
    ad::Var h;
    ad::Var u_next;
    ad::Var data;
    ad::Var pde;
    ad::Var mono;
    ad::Var total;
};

/// Records u, u_t, u_x, G, H and the composite loss of one batch.
inline BatchGraph record_batch(ad::Tape &tape, const QpinnModel &m, const BoundModel &bm,
                               const PreparedSet &set, const Batch &batch, double alpha,
                               double beta) {
    const auto rows = static_cast<Index>(batch.rows.size());
    require(rows > 0, "record_batch: empty batch");
    const Index d = m.feature_dim();
    Matrix xu(rows, d);
    Matrix t(rows, 1);
    Matrix tn(rows, 1);
    Matrix y(rows, 1);
    Matrix psi;
    if (m.embedder) {
        psi.resize(rows, m.psi_width());
    }
    Eigen::VectorXd w(rows);
    for (Index i = 0; i < rows; ++i) {
        const auto r = static_cast<Index>(batch.rows[static_cast<std::size_t>(i)]);
        xu.row(i) = set.x_unit.row(r);
        t(i, 0) = set.t(r);
        tn(i, 0) = batch.t_next[static_cast<std::size_t>(i)];
        y(i, 0) = set.y(r);
        w(i) = batch.mono_weight[static_cast<std::size_t>(i)];
        if (m.embedder) {
            psi.row(i) = set.psi.row(r);
        }
    }

    const ad::Var xv = tape.constant(std::move(xu));
    const ad::Var tv = tape.constant(std::move(t));
    const ad::Var ones = tape.constant(Matrix::Ones(rows, 1));
    std::vector<ad::InputBlock> z_blocks;
    if (m.embedder) {
        z_blocks.push_back({tape.constant(std::move(psi)), 0});
    }
    ad::NetworkTrace enc_trace;
    if (m.has_encoder()) {
        enc_trace = ad::forward(tape, bm.encoder, xv);
        z_blocks.push_back({enc_trace.output(), m.x_block_offset()});
    } else {
        z_blocks.push_back({xv, m.x_block_offset()});
    }
    const auto &wf = bm.solution.weights[0];

    // F(z): shared first-layer part, then the t column.
    const ad::Var partial = ad::first_layer_linear(tape, bm.solution, z_blocks);
    const auto f_trace = ad::forward_from_linear(
        tape, bm.solution, tape.add(partial, tape.linear_block(tv, wf, m.t_offset())));

    BatchGraph out;
    out.u = f_trace.output();
    out.u_t = ad::tangent_from_linear(tape, bm.solution, f_trace,
                                      tape.linear_block(ones, wf, m.t_offset()));
    for (Index j = 0; j < d; ++j) {
        ad::Var first;
        if (m.has_encoder()) {
            const auto de = ad::tangent_from_linear(
                tape, bm.encoder, enc_trace, tape.linear_block(ones, bm.encoder.weights[0], j));
            first = tape.linear_block(de, wf, m.x_block_offset());
        } else {
            first = tape.linear_block(ones, wf, m.x_block_offset() + j);
        }
        out.u_x.push_back(ad::tangent_from_linear(tape, bm.solution, f_trace, first));
    }

    auto g_blocks = z_blocks;
    g_blocks.push_back({tv, m.t_offset()});
    g_blocks.push_back({out.u, m.z_width()});
    g_blocks.push_back({out.u_t, m.z_width() + 1});
    g_blocks.push_back({tape.concat_cols(out.u_x), m.z_width() + 2});
    out.g = ad::forward(tape, bm.dynamics, g_blocks).output();
    out.h = tape.sub(out.u_t, out.g);

    const auto next_trace = ad::forward_from_linear(
        tape, bm.solution,
        tape.add(partial, tape.linear_block(tape.constant(std::move(tn)), wf, m.t_offset())));
    out.u_next = next_trace.output();

    out.data = tape.mean_square(tape.sub(out.u, tape.constant(std::move(y))));
    out.pde = tape.mean_square(out.h);
    out.mono = tape.weighted_hinge_square(tape.sub(out.u_next, out.u), std::move(w));
    out.total = tape.add(out.data, tape.add(tape.scale(out.pde, alpha), tape.scale(out.mono, beta)));
    return out;
}

inline LossBreakdown breakdown(const ad::Tape &tape, const BatchGraph &g, double alpha, double beta) {
    auto out = total_loss(tape.scalar(g.data), tape.scalar(g.pde), tape.scalar(g.mono), alpha, beta);
    out.total = tape.scalar(g.total);
    return out;
}

/// Whole-cell batches in cell order; each cell is a single block.
inline std::vector<Batch> whole_cell_batches(const PreparedSet &set, int batch_size) {
    std::vector<Batch> out;
    std::vector<std::vector<std::size_t>> pending;
    std::size_t pending_rows = 0;
    for (const auto &c : set.cells) {
        std::vector<std::size_t> block;
        for (std::size_t r = c.begin; r < c.end; ++r) {
            block.push_back(r);
        }
        if (!pending.empty() && pending_rows + block.size() > static_cast<std::size_t>(batch_size)) {
            out.push_back(make_batch(set, pending));
            pending.clear();
            pending_rows = 0;
        }
        pending_rows += block.size();
        pending.push_back(std::move(block));
    }
    if (!pending.empty()) {
        out.push_back(make_batch(set, pending));
    }
    return out;
}

/**
 * Losses over a whole split: data and PDE terms averaged over rows, the
 * monotonicity term averaged over cells (each over its full trajectory).
 */
inline LossBreakdown evaluate_losses(const QpinnModel &m, const PreparedSet &set, double alpha,
                                     double beta, int batch_size = 256) {
    require(set.size() > 0, "evaluate_losses: empty split");
    double data = 0.0;
    double pde = 0.0;
    double mono = 0.0;
    std::size_t cells = 0;
    for (const auto &batch : whole_cell_batches(set, batch_size)) {
        ad::Tape tape;
        const auto bm = bind_model(tape, m, false);
        const auto g = record_batch(tape, m, bm, set, batch, alpha, beta);
        const auto n = static_cast<double>(batch.rows.size());
        data += tape.scalar(g.data) * n;
        pde += tape.scalar(g.pde) * n;
        mono += tape.scalar(g.mono) * static_cast<double>(batch.cells);
        cells += batch.cells;
    }
    const auto n = static_cast<double>(set.size());
    return total_loss(data / n, pde / n, mono / static_cast<double>(cells), alpha, beta);
}

// ---------------------------------------------------------------------------
// Inference

struct HybridInput {
    Eigen::VectorXd z;
    Index psi_width = 0;
    Index x_block_width = 0;
};

/// z = [psi_q(scale(x)), enc(x), t]; the psi segment is a constant of training.
inline HybridInput hybrid_input(double t, const std::vector<double> &x, const QpinnModel &m) {
    if (!m.scaler.fitted() || (m.variant == Variant::qpinn && !m.embedder)) {
        throw InvalidInput("hybrid_input: model is not fitted");
    }
    const auto unit = m.scaler.unit(x);
    const Eigen::Map<const Eigen::VectorXd> xu(unit.data(), static_cast<Index>(unit.size()));
    HybridInput out;
    out.psi_width = m.psi_width();
    out.x_block_width = m.x_block_width();
    out.z.resize(m.z_width());
    if (m.embedder) {
        out.z.head(m.psi_width()) = m.embedder->embed(m.scaler.scale(x)).values;
    }
    out.z.segment(m.x_block_offset(), m.x_block_width()) =
        m.has_encoder() ? ad::forward(m.encoder, xu) : Eigen::VectorXd(xu);
    out.z(m.t_offset()) = t;
    return out;
}

inline double predict_soh(const QpinnModel &m, double t, const std::vector<double> &x) {
    const double u = ad::forward(m.solution, hybrid_input(t, x, m).z)(0);
    if (!std::isfinite(u)) {
        throw NumericalFault("predict_soh: non-finite model output");
    }
    return u;
}

/// Predictions for every row of a prepared set, in set order.
inline Eigen::VectorXd predict(const QpinnModel &m, const PreparedSet &set) {
    const auto n = static_cast<Index>(set.size());
    Matrix z(n, m.z_width());
    if (m.embedder) {
        z.leftCols(m.psi_width()) = set.psi;
    }
    z.middleCols(m.x_block_offset(), m.x_block_width()) =
        m.has_encoder() ? m.encoder.forward_batch(set.x_unit) : set.x_unit;
    z.col(m.t_offset()) = set.t;
    Eigen::VectorXd u = m.solution.forward_batch(z).col(0);
    if (!u.allFinite()) {
        throw NumericalFault("predict: non-finite model output");
    }
    return u;
}

/// Residual H(t, x) for a single input.
inline double residual(const QpinnModel &m, double t, const std::vector<double> &x) {
    PreparedSet set;
    set.cell_of_row = {"_"};
    set.cycle_of_row = {0};
    const auto unit = m.scaler.unit(x);
    set.x_unit = Eigen::Map<const Eigen::RowVectorXd>(unit.data(), static_cast<Index>(unit.size()));
    set.t = Eigen::VectorXd::Constant(1, t);
    set.y = Eigen::VectorXd::Zero(1);
    if (m.embedder) {
        set.psi = m.embedder->embed(m.scaler.scale(x)).values.transpose();
    }
    set.cells.push_back({"_", 0, 1});
    ad::Tape tape;
    const auto bm = bind_model(tape, m, false);
    const auto g = record_batch(tape, m, bm, set, make_batch(set, {{0}}), 0.0, 0.0);
    return tape.value(g.h)(0, 0);
}

/// Mean of H^2 over a set of rows (collocation points are the rows themselves).
inline double loss_pde(const QpinnModel &m, const std::vector<data::FeatureRow> &rows) {
    require(!rows.empty(), "loss_pde: empty batch");
    const auto set = prepare(m, rows);
    return evaluate_losses(m, set, 0.0, 0.0, static_cast<int>(set.size())).pde_term;
}

/// Monotonicity penalty of the model over one cell trajectory.
inline double loss_mono(const QpinnModel &m, std::vector<data::FeatureRow> trajectory,
                        Diagnostics *diag = nullptr) {
    if (trajectory.size() < 2) {
        if (diag != nullptr) {
            diag->warn("loss_mono: trajectory shorter than 2; penalty is 0");
        }
        return 0.0;
    }
    for (std::size_t k = 1; k < trajectory.size(); ++k) {
        require(trajectory[k].cell_id == trajectory[0].cell_id,
                "loss_mono: trajectory spans several cells");
        require(trajectory[k].cycle_index > trajectory[k - 1].cycle_index,
                "loss_mono: trajectory must be sorted by cycle");
    }
    std::vector<double> current;
    std::vector<double> next;
    for (std::size_t k = 0; k + 1 < trajectory.size(); ++k) {
        const auto &x = trajectory[k].x;
        current.push_back(predict_soh(m, m.scale_time(trajectory[k].cycle_index), x));
        next.push_back(predict_soh(m, m.scale_time(trajectory[k + 1].cycle_index), x));
    }
    return monotonicity_penalty(current, next, trajectory.size());
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    LossBreakdown train{};
    double val_total = 0.0;
    int rejected_steps = 0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    double initial_val_total = 0.0;
    double best_val_total = 0.0;
    int best_epoch = 0;
    bool diverged = false;
    std::string message;
};

namespace detail {

struct ParameterGroup {
    std::vector<ad::Matrix *> params;

    void add(ad::DenseNetwork &net) {
        for (auto *p : net.parameters()) {
            params.push_back(p);
        }
    }
};

inline void append(std::vector<Matrix> &out, const ad::GradientBundle &g) {
    out.insert(out.end(), g.partials.begin(), g.partials.end());
}

/// Shuffled cell-contiguous blocks packed into batches.
inline std::vector<Batch> epoch_batches(const PreparedSet &set, const TrainConfig &cfg, Rng &rng) {
    std::vector<std::vector<std::size_t>> blocks;
    for (const auto &c : set.cells) {
        for (std::size_t s = c.begin; s < c.end; s += static_cast<std::size_t>(cfg.block_length)) {
            std::vector<std::size_t> block;
            for (std::size_t r = s; r < std::min(c.end, s + static_cast<std::size_t>(cfg.block_length)); ++r) {
                block.push_back(r);
            }
            blocks.push_back(std::move(block));
        }
    }
    rng.shuffle(blocks);
    std::vector<Batch> out;
    std::vector<std::vector<std::size_t>> pending;
    std::size_t rows = 0;
    for (auto &block : blocks) {
        if (!pending.empty() && rows + block.size() > static_cast<std::size_t>(cfg.batch_size)) {
            out.push_back(make_batch(set, pending));
            pending.clear();
            rows = 0;
        }
        rows += block.size();
        pending.push_back(std::move(block));
    }
    if (!pending.empty()) {
        out.push_back(make_batch(set, pending));
    }
    return out;
}

struct Snapshot {
    ad::DenseNetwork solution;
    ad::DenseNetwork dynamics;
    ad::DenseNetwork encoder;

    static Snapshot of(const QpinnModel &m) { return {m.solution, m.dynamics, m.encoder}; }
    void restore(QpinnModel &m) const {
        m.solution = solution;
        m.dynamics = dynamics;
        m.encoder = encoder;
    }
};

/**
 * Shared optimization loop. `train_dynamics = false` leaves G out of the
 * parameter group entirely.
 */
inline TrainResult optimize(QpinnModel &m, const PreparedSet &train, const PreparedSet &val,
                            const TrainConfig &cfg, int epochs, double lr, bool train_dynamics,
                            std::uint64_t stream) {
    cfg.validate();
    require(train.size() > 0, "train: empty training split");
    require(val.size() > 0, "train: empty validation split");
    const bool mlp = m.variant == Variant::mlp_baseline;
    const double alpha = mlp ? 0.0 : cfg.alpha;
    const double beta = mlp ? 0.0 : cfg.beta;

    TrainResult result;
    result.initial_val_total = evaluate_losses(m, val, alpha, beta, cfg.batch_size).total;
    result.best_val_total = result.initial_val_total;
    Snapshot best = Snapshot::of(m);

    ad::AdamState state;
    const ad::AdamHyper hyper{0.9, 0.999, 1e-8, cfg.clip_norm};
    Rng rng(derive_seed(cfg.seed, stream));
    double current_lr = lr;
    double plateau_best = result.initial_val_total;
    int bad_epochs = 0;

    for (int epoch = 1; epoch <= epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = current_lr;
        double rows_seen = 0.0;
        for (const auto &batch : epoch_batches(train, cfg, rng)) {
            ad::Tape tape;
            const auto bm = bind_model(tape, m, true, train_dynamics);
            const auto graph = record_batch(tape, m, bm, train, batch, alpha, beta);
            const auto parts = breakdown(tape, graph, alpha, beta);
            if (!std::isfinite(parts.total)) {
                result.diverged = true;
                result.message = "non-finite loss at epoch " + std::to_string(epoch);
                break;
            }
            tape.backward(graph.total);

            detail::ParameterGroup group;
            std::vector<Matrix> grads;
            group.add(m.solution);
            append(grads, ad::gradients(tape, bm.solution));
            if (train_dynamics) {
                group.add(m.dynamics);
                append(grads, ad::gradients(tape, bm.dynamics));
            }
            if (m.has_encoder()) {
                group.add(m.encoder);
                append(grads, ad::gradients(tape, bm.encoder));
            }
            const auto step = ad::adam_step(group.params, grads, state, current_lr,
                                            cfg.weight_decay, hyper);
            if (!step.applied) {
                ++rec.rejected_steps;
                result.diverged = true;
                result.message = "non-finite gradient at epoch " + std::to_string(epoch);
                break;
            }
            const auto n = static_cast<double>(batch.rows.size());
            rec.train.data_term += parts.data_term * n;
            rec.train.pde_term += parts.pde_term * n;
            rec.train.mono_term += parts.mono_term * n;
            rows_seen += n;
        }
        if (result.diverged) {
            break;
        }
        rec.train = total_loss(rec.train.data_term / rows_seen, rec.train.pde_term / rows_seen,
                               rec.train.mono_term / rows_seen, alpha, beta);
        rec.val_total = evaluate_losses(m, val, alpha, beta, cfg.batch_size).total;
        if (!std::isfinite(rec.val_total)) {
            result.diverged = true;
            result.message = "non-finite validation loss at epoch " + std::to_string(epoch);
            break;
        }
        if (rec.val_total < result.best_val_total) {
            result.best_val_total = rec.val_total;
            result.best_epoch = epoch;
            best = Snapshot::of(m);
        }
        if (rec.val_total < plateau_best - cfg.plateau_threshold) {
            plateau_best = rec.val_total;
            bad_epochs = 0;
        } else if (++bad_epochs >= cfg.plateau_patience) {
            current_lr *= cfg.plateau_factor;
            bad_epochs = 0;
        }
        result.history.push_back(rec);
    }
    best.restore(m);
    return result;
}

} // namespace detail

/**
 * Trains all networks of the model on the source domain. The best
 * validation parameters are kept; on divergence training stops and the model
 * holds the last good (best) parameters.
 */
inline TrainResult train(QpinnModel &m, const PreparedSet &train_set, const PreparedSet &val_set,
                         const TrainConfig &cfg) {
    m.config = cfg;
    return detail::optimize(m, train_set, val_set, cfg, cfg.epochs, cfg.lr, true, 0x7121ULL);
}

/**
 * Adapts a trained model to a target domain. The scaler, time scale and
 * embedder stay those of the source; with freeze_dynamics the dynamics
 * network receives no updates.
 */
inline TrainResult fine_tune(QpinnModel &m, const PreparedSet &target_train,
                             const PreparedSet &target_val, const TrainConfig &cfg,
                             const std::string &target_tag = {}) {
    auto result = detail::optimize(m, target_train, target_val, cfg, cfg.fine_tune.epochs,
                                   cfg.fine_tune.lr, !cfg.fine_tune.freeze_dynamics, 0xF1AEULL);
    if (!target_tag.empty()) {
        m.target_tag = target_tag;
    }
    return result;
}

} // namespace qpinn::pinn
