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
 * @file eval.hpp
 * Metrics, multi-seed experiment runs, the cross-domain transfer matrix and
 * report writers.
 */

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "data.hpp"
#include "error.hpp"
#include "pinn.hpp"
#include "random.hpp"

namespace qpinn::eval {

using pinn::Index;

/// Mean absolute percentage error as a fraction.
inline double mape(std::span<const double> predictions, std::span<const double> labels) {
    require(predictions.size() == labels.size(), "mape: length mismatch");
    require(!labels.empty(), "mape: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 0.0) {
            throw InvalidInput("mape: label at index " + std::to_string(i) + " is zero");
        }
        s += std::abs(predictions[i] - labels[i]) / std::abs(labels[i]);
    }
    return s / static_cast<double>(labels.size());
}

inline double rmse(std::span<const double> predictions, std::span<const double> labels) {
    require(predictions.size() == labels.size(), "rmse: length mismatch");
    require(!labels.empty(), "rmse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double d = predictions[i] - labels[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(labels.size()));
}

inline std::span<const double> view(const Eigen::VectorXd &v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

struct MetricReport {
    std::string dataset;
    std::string variant;
    std::string split;
    std::optional<std::uint64_t> seed; ///< empty on the mean-over-seeds row
    double mape = 0.0;
    double rmse = 0.0;
    std::size_t n_samples = 0;
    double runtime_s = 0.0;
    bool failed = false;
    std::string message;
};

struct PredictionRow {
    std::string cell_id;
    long cycle_index = 0;
    double soh_true = 0.0;
    double soh_pred = 0.0;
};

/// Fraction of within-cell steps whose prediction rises by more than `threshold`.
struct MonotonicityStats {
    std::size_t steps = 0;
    std::size_t increases = 0;
    [[nodiscard]] double fraction() const {
        return steps == 0 ? 0.0 : static_cast<double>(increases) / static_cast<double>(steps);
    }
};

inline MonotonicityStats trajectory_increases(const std::vector<PredictionRow> &rows,
                                              double threshold = 1e-3) {
    MonotonicityStats s;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].cell_id != rows[i - 1].cell_id) {
            continue;
        }
        ++s.steps;
        if (rows[i].soh_pred - rows[i - 1].soh_pred > threshold) {
            ++s.increases;
        }
    }
    return s;
}

/// Forward differences u(t_{k+1}, x_k) - u(t_k, x_k) at fixed features, per cell.
inline MonotonicityStats fixed_feature_increases(const pinn::QpinnModel &m,
                                                 const pinn::PreparedSet &set,
                                                 double threshold = 1e-3) {
    MonotonicityStats s;
    pinn::PreparedSet next = set;
    for (const auto &c : set.cells) {
        for (std::size_t r = c.begin; r + 1 < c.end; ++r) {
            next.t(static_cast<Index>(r)) = set.t(static_cast<Index>(r + 1));
        }
    }
    const auto u = pinn::predict(m, set);
    const auto un = pinn::predict(m, next);
    for (const auto &c : set.cells) {
        for (std::size_t r = c.begin; r + 1 < c.end; ++r) {
            ++s.steps;
            if (un(static_cast<Index>(r)) - u(static_cast<Index>(r)) > threshold) {
                ++s.increases;
            }
        }
    }
    return s;
}

inline std::vector<PredictionRow> prediction_rows(const pinn::PreparedSet &set,
                                                  const Eigen::VectorXd &pred) {
    std::vector<PredictionRow> out;
    out.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        out.push_back({set.cell_of_row[i], set.cycle_of_row[i], set.y(static_cast<Index>(i)),
                       pred(static_cast<Index>(i))});
    }
    return out;
}

/// t = cycle_index / max cycle index over the given rows (at least 1).
inline double time_scale(const std::vector<data::FeatureRow> &rows) {
    long hi = 1;
    for (const auto &r : rows) {
        hi = std::max(hi, r.cycle_index);
    }
    return static_cast<double>(hi);
}

inline void apply_time_scale(std::vector<data::FeatureRow> &rows, double t_scale) {
    for (auto &r : rows) {
        r.t = static_cast<double>(r.cycle_index) / t_scale;
    }
}

struct ExperimentConfig {
    std::string dataset = "dataset";
    data::SplitSpec split{};
    std::vector<pinn::Variant> variants{pinn::Variant::qpinn};
    std::vector<std::uint64_t> seeds{0};
    pinn::Architecture architecture{};
    pinn::QuantumConfig quantum{};
    pinn::TrainConfig train{};
    bool clamp_predictions = false; ///< clamp reported predictions to [0, 1.2]
    bool timing = false;            ///< record wall time; off keeps reports byte-stable
};

struct CorpusSplit {
    std::vector<data::FeatureRow> train;
    std::vector<data::FeatureRow> val;
    std::vector<data::FeatureRow> test;
    double t_scale = 1.0;
};

/// Cell-level split with t rescaled by the training split's maximum cycle index.
inline CorpusSplit split_corpus(std::vector<data::FeatureRow> rows, const data::SplitSpec &spec,
                                Diagnostics *diag = nullptr) {
    const auto cells = data::split_by_cell(data::cell_ids(rows), spec, diag);
    CorpusSplit out;
    out.train = data::rows_for(rows, cells.train);
    out.val = data::rows_for(rows, cells.val);
    out.test = data::rows_for(rows, cells.test);
    out.t_scale = time_scale(out.train);
    apply_time_scale(out.train, out.t_scale);
    apply_time_scale(out.val, out.t_scale);
    apply_time_scale(out.test, out.t_scale);
    return out;
}

struct RunRecord {
    pinn::Variant variant = pinn::Variant::qpinn;
    std::uint64_t seed = 0;
    std::optional<pinn::QpinnModel> model;
    pinn::TrainResult training;
    std::vector<PredictionRow> predictions;
    MetricReport report;
};

struct ExperimentResult {
    std::vector<MetricReport> reports; ///< per-seed rows, then one mean row, per variant
    std::vector<RunRecord> runs;
    Diagnostics diagnostics;
};

inline std::uint64_t landmark_seed_for(const pinn::QuantumConfig &q, std::uint64_t seed) {
    return derive_seed(q.landmark_seed ^ seed, 0x1a4dULL);
}

/**
 * Trains and evaluates one (variant, seed) pair on a prepared split. The
 * seed drives network initialization, batch order and landmark selection.
 */
inline RunRecord run_single(const CorpusSplit &split, const ExperimentConfig &cfg,
                            pinn::Variant variant, std::uint64_t seed, Diagnostics *diag = nullptr) {
    RunRecord run;
    run.variant = variant;
    run.seed = seed;
    auto &rep = run.report;
    rep.dataset = cfg.dataset;
    rep.variant = pinn::to_string(variant);
    const bool has_test = !split.test.empty();
    rep.split = has_test ? "test" : "val";
    rep.seed = seed;
    const auto &eval_rows = has_test ? split.test : split.val;
    rep.n_samples = eval_rows.size();
    const auto start = std::chrono::steady_clock::now();
    try {
        auto q = cfg.quantum;
        q.landmark_seed = landmark_seed_for(cfg.quantum, seed);
        auto model = pinn::make_model(variant, cfg.architecture, split.train, q, split.t_scale,
                                      seed, diag);
        auto train_cfg = cfg.train;
        train_cfg.seed = seed;
        const auto tr = pinn::prepare(model, split.train);
        const auto va = pinn::prepare(model, split.val);
        run.training = pinn::train(model, tr, va, train_cfg);
        if (run.training.diverged) {
            throw NumericalFault("training diverged: " + run.training.message);
        }
        const auto ev = pinn::prepare(model, eval_rows);
        Eigen::VectorXd pred = pinn::predict(model, ev);
        if (cfg.clamp_predictions) {
            pred = pred.cwiseMax(0.0).cwiseMin(1.2);
        }
        rep.mape = mape(view(pred), view(ev.y));
        rep.rmse = rmse(view(pred), view(ev.y));
        run.predictions = prediction_rows(ev, pred);
        run.model = std::move(model);
    } catch (const Error &e) {
        rep.failed = true;
        rep.message = e.what();
        rep.mape = std::numeric_limits<double>::quiet_NaN();
        rep.rmse = std::numeric_limits<double>::quiet_NaN();
        if (diag != nullptr) {
            diag->warn(rep.variant + " seed " + std::to_string(seed) + ": " + rep.message);
        }
    }
    if (cfg.timing) {
        rep.runtime_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    return run;
}

inline MetricReport mean_report(const std::vector<MetricReport> &rows) {
    require(!rows.empty(), "mean_report: no rows");
    MetricReport m = rows.front();
    m.seed.reset();
    m.mape = m.rmse = m.runtime_s = 0.0;
    m.failed = false;
    m.message.clear();
    std::size_t ok = 0;
    for (const auto &r : rows) {
        if (r.failed) {
            continue;
        }
        m.mape += r.mape;
        m.rmse += r.rmse;
        m.runtime_s += r.runtime_s;
        ++ok;
    }
    if (ok == 0) {
        m.failed = true;
        m.mape = m.rmse = std::numeric_limits<double>::quiet_NaN();
        return m;
    }
    m.mape /= static_cast<double>(ok);
    m.rmse /= static_cast<double>(ok);
    m.runtime_s /= static_cast<double>(ok);
    return m;
}

/// Every (variant, seed) appears exactly once, failed or not, followed by a mean row.
inline ExperimentResult run_experiment(const std::vector<data::FeatureRow> &rows,
                                       const ExperimentConfig &cfg, bool keep_models = false) {
    require(!cfg.variants.empty(), "run_experiment: no variants");
    require(!cfg.seeds.empty(), "run_experiment: no seeds");
    ExperimentResult result;
    const auto split = split_corpus(rows, cfg.split, &result.diagnostics);
    require(!split.val.empty(), "run_experiment: validation split is empty");
    for (const auto variant : cfg.variants) {
        std::vector<MetricReport> group;
        for (const auto seed : cfg.seeds) {
            auto run = run_single(split, cfg, variant, seed, &result.diagnostics);
            group.push_back(run.report);
            if (!keep_models) {
                run.model.reset();
            }
            result.runs.push_back(std::move(run));
        }
        result.reports.insert(result.reports.end(), group.begin(), group.end());
        result.reports.push_back(mean_report(group));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Transfer

struct Corpus {
    std::string tag;
    std::vector<data::FeatureRow> rows;
};

struct TransferConfig {
    ExperimentConfig base{};           ///< variant taken from base.variants.front()
    int source_epochs = 200;           ///< source-domain training length
    std::uint64_t seed = 0;
};

struct TransferEntry {
    std::string source;
    std::string target;
    double source_only_rmse = 0.0;
    double fine_tuned_rmse = 0.0;
    bool dynamics_frozen = true; ///< dynamics parameters bitwise unchanged by fine-tuning
    bool failed = false;
    std::string message;
};

struct TransferMatrix {
    std::vector<std::string> corpora;
    std::vector<TransferEntry> entries; ///< ordered pairs with source != target

    [[nodiscard]] const TransferEntry *find(const std::string &s, const std::string &t) const {
        for (const auto &e : entries) {
            if (e.source == s && e.target == t) {
                return &e;
            }
        }
        return nullptr;
    }
};

/**
 * Source-only and fine-tuned RMSE of one ordered pair. The target corpus is
 * split by cells with the same rule; source-only RMSE applies the source
 * model (scaler, embedder and time scale included) to the target test cells.
 */
inline TransferEntry run_transfer_pair(const Corpus &source, const Corpus &target,
                                       const TransferConfig &cfg, Diagnostics *diag = nullptr) {
    TransferEntry e;
    e.source = source.tag;
    e.target = target.tag;
    try {
        const auto &base = cfg.base;
        const auto variant = base.variants.front();
        auto src = split_corpus(source.rows, base.split, diag);
        require(!src.val.empty(), "transfer: source validation split is empty");
        auto q = base.quantum;
        q.landmark_seed = landmark_seed_for(base.quantum, cfg.seed);
        auto model = pinn::make_model(variant, base.architecture, src.train, q, src.t_scale,
                                      cfg.seed, diag);
        auto train_cfg = base.train;
        train_cfg.seed = cfg.seed;
        train_cfg.epochs = cfg.source_epochs;
        const auto r = pinn::train(model, pinn::prepare(model, src.train),
                                   pinn::prepare(model, src.val), train_cfg);
        if (r.diverged) {
            throw NumericalFault("source training diverged: " + r.message);
        }
        model.source_tag = source.tag;

        // target rows use the source time scale
        const auto cells = data::split_by_cell(data::cell_ids(target.rows), base.split, diag);
        auto tgt_train = data::rows_for(target.rows, cells.train);
        auto tgt_val = data::rows_for(target.rows, cells.val);
        auto tgt_test = data::rows_for(target.rows, cells.test);
        require(!tgt_val.empty() && !tgt_test.empty(), "transfer: target needs val and test cells");
        for (auto *rows : {&tgt_train, &tgt_val, &tgt_test}) {
            apply_time_scale(*rows, model.t_scale);
        }
        const auto test = pinn::prepare(model, tgt_test);
        e.source_only_rmse = rmse(view(pinn::predict(model, test)), view(test.y));

        const auto dynamics = model.dynamics;
        const auto ft = pinn::fine_tune(model, pinn::prepare(model, tgt_train),
                                        pinn::prepare(model, tgt_val), train_cfg, target.tag);
        if (ft.diverged) {
            throw NumericalFault("fine-tuning diverged: " + ft.message);
        }
        e.dynamics_frozen = model.dynamics == dynamics;
        e.fine_tuned_rmse = rmse(view(pinn::predict(model, test)), view(test.y));
    } catch (const Error &ex) {
        e.failed = true;
        e.message = ex.what();
        e.source_only_rmse = e.fine_tuned_rmse = std::numeric_limits<double>::quiet_NaN();
        if (diag != nullptr) {
            diag->warn("transfer " + e.source + " -> " + e.target + ": " + e.message);
        }
    }
    return e;
}

inline TransferMatrix run_transfer(const std::vector<Corpus> &corpora, const TransferConfig &cfg,
                                   Diagnostics *diag = nullptr) {
    require(corpora.size() >= 2, "run_transfer: need at least two corpora");
    TransferMatrix m;
    for (const auto &c : corpora) {
        m.corpora.push_back(c.tag);
    }
    for (const auto &s : corpora) {
        for (const auto &t : corpora) {
            if (s.tag != t.tag) {
                m.entries.push_back(run_transfer_pair(s, t, cfg, diag));
            }
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Writers

inline std::string format_metric(double v) { return std::isnan(v) ? "nan" : csv::format(v); }

inline void write_reports(const std::vector<MetricReport> &reports, const std::filesystem::path &file) {
    auto out = csv::open_output(file.string());
    out << "dataset,variant,split,seed,mape,rmse,n_samples,runtime_s\n";
    for (const auto &r : reports) {
        out << r.dataset << ',' << r.variant << ',' << r.split << ','
            << (r.seed ? std::to_string(*r.seed) : std::string("mean")) << ','
            << format_metric(r.mape) << ',' << format_metric(r.rmse) << ',' << r.n_samples << ','
            << csv::format(r.runtime_s) << '\n';
    }
}

/// Each ordered pair gives a source_only and a fine_tuned row; the diagonal is not_applicable.
inline void write_transfer(const TransferMatrix &m, const std::filesystem::path &file) {
    auto out = csv::open_output(file.string());
    out << "source,target,mode,rmse\n";
    for (const auto &s : m.corpora) {
        for (const auto &t : m.corpora) {
            if (s == t) {
                out << s << ',' << t << ",not_applicable,\n";
                continue;
            }
            const auto *e = m.find(s, t);
            require(e != nullptr, "write_transfer: missing pair " + s + " -> " + t);
            out << s << ',' << t << ",source_only," << format_metric(e->source_only_rmse) << '\n';
            out << s << ',' << t << ",fine_tuned," << format_metric(e->fine_tuned_rmse) << '\n';
        }
    }
}

inline void write_predictions(const std::vector<PredictionRow> &rows, const std::filesystem::path &file) {
    auto out = csv::open_output(file.string());
    out << "cell_id,cycle_index,soh_true,soh_pred\n";
    for (const auto &r : rows) {
        out << r.cell_id << ',' << r.cycle_index << ',' << csv::format(r.soh_true) << ','
            << csv::format(r.soh_pred) << '\n';
    }
}

inline void write_history(const pinn::TrainResult &r, const std::filesystem::path &file) {
    auto out = csv::open_output(file.string());
    out << "epoch,lr,data_term,pde_term,mono_term,total,val_total\n";
    for (const auto &h : r.history) {
        out << h.epoch << ',' << csv::format(h.lr) << ',' << csv::format(h.train.data_term) << ','
            << csv::format(h.train.pde_term) << ',' << csv::format(h.train.mono_term) << ','
            << csv::format(h.train.total) << ',' << csv::format(h.val_total) << '\n';
    }
}

/// Predicted (solid) against true (dashed) SOH per cell over cycles.
inline void write_svg(const std::vector<PredictionRow> &rows, const std::filesystem::path &file,
                      const std::string &title = "SOH") {
    require(!rows.empty(), "write_svg: no rows");
    const double w = 800;
    const double h = 480;
    const double pad = 50;
    double x0 = static_cast<double>(rows.front().cycle_index);
    double x1 = x0;
    double y0 = rows.front().soh_true;
    double y1 = y0;
    for (const auto &r : rows) {
        x0 = std::min(x0, static_cast<double>(r.cycle_index));
        x1 = std::max(x1, static_cast<double>(r.cycle_index));
        y0 = std::min({y0, r.soh_true, r.soh_pred});
        y1 = std::max({y1, r.soh_true, r.soh_pred});
    }
    if (x1 == x0) {
        x1 = x0 + 1;
    }
    if (y1 == y0) {
        y1 = y0 + 1e-3;
    }
    auto px = [&](double x) { return pad + (x - x0) / (x1 - x0) * (w - 2 * pad); };
    auto py = [&](double y) { return h - pad - (y - y0) / (y1 - y0) * (h - 2 * pad); };
    static const char *colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

    std::map<std::string, std::vector<const PredictionRow *>> cells;
    for (const auto &r : rows) {
        cells[r.cell_id].push_back(&r);
    }
    auto out = csv::open_output(file.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << pad << "\" y=\"20\">" << title << "</text>\n"
        << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\""
        << h - pad << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad
        << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << w / 2 << "\" y=\"" << h - 15 << "\">cycle</text>\n"
        << "<text x=\"5\" y=\"" << pad - 10 << "\">" << csv::format(y1) << "</text>\n"
        << "<text x=\"5\" y=\"" << h - pad << "\">" << csv::format(y0) << "</text>\n";
    std::size_t k = 0;
    for (const auto &[cell, pts] : cells) {
        const char *color = colors[k++ % std::size(colors)];
        for (int pass = 0; pass < 2; ++pass) {
            out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.2\""
                << (pass == 0 ? " stroke-dasharray=\"4 3\" opacity=\"0.6\"" : "") << " points=\"";
            for (const auto *p : pts) {
                out << px(static_cast<double>(p->cycle_index)) << ','
                    << py(pass == 0 ? p->soh_true : p->soh_pred) << ' ';
            }
            out << "\"><title>" << cell << "</title></polyline>\n";
        }
    }
    out << "</svg>\n";
}

} // namespace qpinn::eval
