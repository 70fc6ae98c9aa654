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

// qpinn: command-line front end for ingestion, training, evaluation,
// transfer and kernel diagnostics. Exit status: 0 success, 1 usage or
// configuration error, 2 data error, 3 numerical failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qpinn/config.hpp"
#include "qpinn/data.hpp"
#include "qpinn/eval.hpp"
#include "qpinn/model_io.hpp"
#include "qpinn/pinn.hpp"
#include "qpinn/quantum.hpp"
#include "qpinn/synth.hpp"

namespace fs = std::filesystem;
using namespace qpinn;

namespace {

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_data = 2, exit_numerical = 3 };

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string variant;
    std::string data;
};

/// Input files and their digests, in a stable order.
struct InputLog {
    std::vector<std::pair<std::string, std::string>> files;

    void add(const fs::path &p) {
        if (fs::is_directory(p)) {
            std::vector<fs::path> entries;
            for (const auto &e : fs::directory_iterator(p)) {
                if (e.is_regular_file()) {
                    entries.push_back(e.path());
                }
            }
            std::sort(entries.begin(), entries.end());
            for (const auto &e : entries) {
                add(e);
            }
            return;
        }
        files.emplace_back(p.generic_string(), io::file_sha256(p));
    }

    [[nodiscard]] nlohmann::json json() const {
        auto arr = nlohmann::json::array();
        for (const auto &[path, digest] : files) {
            arr.push_back({{"path", path}, {"sha256", digest}});
        }
        return arr;
    }
};

void report(const Diagnostics &diag) {
    for (const auto &w : diag.warnings) {
        std::cerr << "warning: " << w << '\n';
    }
}

config::RunConfig load_config(const Common &c, InputLog *log = nullptr) {
    if (c.config.empty()) {
        return config::RunConfig{};
    }
    if (!fs::exists(c.config)) {
        throw InvalidInput("config file '" + c.config + "' not found");
    }
    if (log != nullptr) {
        log->add(c.config);
    }
    return config::load(c.config);
}

/// Applies --data, --seed and --variant on top of the configuration file.
void apply_overrides(config::RunConfig &cfg, const Common &c) {
    if (!c.data.empty()) {
        if (fs::is_directory(c.data) || fs::path(c.data).extension() != ".csv") {
            cfg.data.path = c.data;
            cfg.data.features.clear();
        } else {
            cfg.data.features = c.data;
            cfg.data.path.clear();
        }
    }
    if (c.seed) {
        cfg.train.seed = *c.seed;
        cfg.report.seeds = {*c.seed};
        cfg.transfer.seed = *c.seed;
    }
    if (!c.variant.empty()) {
        cfg.variants = {pinn::variant_from_string(c.variant)};
    }
}

void require_path(const fs::path &p) {
    if (!fs::exists(p)) {
        throw DataError("missing input: " + p.string());
    }
}

/// Feature rows from a dataset directory or a feature CSV, descriptor mask applied.
std::vector<data::FeatureRow> load_source(const std::string &dir, const std::string &features,
                                          const config::RunConfig &cfg, InputLog *log,
                                          Diagnostics &diag) {
    std::vector<data::FeatureRow> rows;
    if (!features.empty()) {
        require_path(features);
        if (log != nullptr) {
            log->add(features);
        }
        rows = data::read_features(features);
        const bool full = !rows.empty() && rows.front().x.size() == data::descriptor_count;
        if (full) {
            data::select_descriptors(rows, cfg.descriptors);
        }
    } else if (!dir.empty()) {
        require_path(dir);
        if (log != nullptr) {
            log->add(dir);
        }
        auto ing = data::ingest(dir, data::layout_from_string(cfg.data.layout));
        diag.warnings.insert(diag.warnings.end(), ing.diagnostics.warnings.begin(),
                             ing.diagnostics.warnings.end());
        rows = data::extract_all(ing.traces, 1.0, &diag);
        data::select_descriptors(rows, cfg.descriptors);
    } else {
        throw InvalidInput("no input data: set [data] path or features, or pass --data");
    }
    if (rows.empty()) {
        throw DataError("no usable rows in input");
    }
    return rows;
}

std::vector<data::FeatureRow> load_rows(const config::RunConfig &cfg, InputLog *log, Diagnostics &diag) {
    return load_source(cfg.data.path, cfg.data.features, cfg, log, diag);
}

fs::path output_dir(const Common &c, const config::RunConfig &cfg) {
    fs::path dir = c.out.empty() ? fs::path(cfg.report.output) : fs::path(c.out);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path &file, const std::string &text) {
    std::ofstream out(file, std::ios::binary);
    if (!out) {
        throw DataError("cannot write '" + file.string() + "'");
    }
    out << text;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Common &c, data::SynthParams p) {
    if (c.out.empty()) {
        throw InvalidInput("synth: --out is required");
    }
    const auto corpus = data::synth_generate(p, c.seed.value_or(0));
    data::emit(corpus.traces, c.out);
    data::write_fade_truth(corpus.truth, fs::path(c.out) / "fade_truth.csv");
    std::cout << "wrote " << corpus.traces.size() << " cells to " << c.out << '\n';
    return exit_ok;
}

int cmd_ingest(const Common &c) {
    auto cfg = load_config(c);
    apply_overrides(cfg, c);
    if (cfg.data.path.empty()) {
        throw InvalidInput("ingest: pass --data <dir> or set [data] path");
    }
    require_path(cfg.data.path);
    const auto ing = data::ingest(cfg.data.path, data::layout_from_string(cfg.data.layout));
    report(ing.diagnostics);
    std::cout << ing.traces.size() << " cells, " << ing.sample_count() << " samples, "
              << ing.malformed_rows << " malformed rows, " << ing.dropped_cycles
              << " dropped cycles\n";
    if (ing.malformed_rows > 0) {
        std::cerr << "error: " << ing.malformed_rows << " malformed rows rejected\n";
        return exit_data;
    }
    if (!c.out.empty()) {
        data::emit(ing.traces, c.out);
    }
    return exit_ok;
}

int cmd_featurize(const Common &c) {
    auto cfg = load_config(c);
    apply_overrides(cfg, c);
    if (cfg.data.path.empty()) {
        throw InvalidInput("featurize: pass --data <dir> or set [data] path");
    }
    require_path(cfg.data.path);
    const auto ing = data::ingest(cfg.data.path, data::layout_from_string(cfg.data.layout));
    Diagnostics diag = ing.diagnostics;
    const long last = std::max(1L, data::max_cycle_index(ing.traces));
    auto rows = data::extract_all(ing.traces, static_cast<double>(last), &diag);
    data::select_descriptors(rows, cfg.descriptors);
    report(diag);
    const auto dir = output_dir(c, cfg);
    data::write_features(rows, dir / "features.csv");
    std::cout << "wrote " << rows.size() << " rows to " << (dir / "features.csv").string() << '\n';
    return ing.malformed_rows > 0 ? exit_data : exit_ok;
}

int cmd_train(const Common &c) {
    InputLog inputs;
    auto cfg = load_config(c, &inputs);
    apply_overrides(cfg, c);
    Diagnostics diag;
    const auto rows = load_rows(cfg, &inputs, diag);
    const auto split = eval::split_corpus(rows, cfg.data.split, &diag);
    if (split.val.empty()) {
        throw DataError("train: validation split is empty; add cells or raise val_fraction");
    }
    const auto variant = cfg.variants.front();
    const auto seed = cfg.train.seed;
    auto q = cfg.quantum;
    q.landmark_seed = eval::landmark_seed_for(cfg.quantum, seed);
    auto model = pinn::make_model(variant, cfg.architecture, split.train, q, split.t_scale, seed, &diag);
    model.source_tag = cfg.data.tag;
    const auto tr = pinn::prepare(model, split.train);
    const auto va = pinn::prepare(model, split.val);
    const auto result = pinn::train(model, tr, va, cfg.train);

    const auto dir = output_dir(c, cfg);
    io::save_model(model, dir / "model.json");
    eval::write_history(result, dir / "history.csv");

    nlohmann::json manifest;
    manifest["command"] = "train";
    manifest["variant"] = pinn::to_string(variant);
    manifest["seed"] = seed;
    manifest["config"] = config::to_ini(cfg);
    manifest["inputs"] = inputs.json();
    manifest["model_sha256"] = io::file_sha256(dir / "model.json");
    manifest["initial_val_total"] = result.initial_val_total;
    manifest["best_val_total"] = result.best_val_total;
    manifest["best_epoch"] = result.best_epoch;
    manifest["diverged"] = result.diverged;

    if (!result.diverged && !split.test.empty()) {
        const auto te = pinn::prepare(model, split.test);
        Eigen::VectorXd pred = pinn::predict(model, te);
        if (cfg.report.clamp) {
            pred = pred.cwiseMax(0.0).cwiseMin(1.2);
        }
        eval::MetricReport rep;
        rep.dataset = cfg.data.tag;
        rep.variant = pinn::to_string(variant);
        rep.split = "test";
        rep.seed = seed;
        rep.mape = eval::mape(eval::view(pred), eval::view(te.y));
        rep.rmse = eval::rmse(eval::view(pred), eval::view(te.y));
        rep.n_samples = te.size();
        eval::write_reports({rep}, dir / "report.csv");
        const auto predictions = eval::prediction_rows(te, pred);
        eval::write_predictions(predictions, dir / "predictions.csv");
        if (cfg.report.plot) {
            eval::write_svg(predictions, dir / "predictions.svg", cfg.data.tag + " " + rep.variant);
        }
        manifest["test_rmse"] = rep.rmse;
        manifest["test_mape"] = rep.mape;
    }
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    report(diag);
    std::cout << "model " << (dir / "model.json").string() << " sha256 "
              << manifest["model_sha256"].get<std::string>() << '\n';
    if (result.diverged) {
        std::cerr << "error: training diverged: " << result.message
                  << " (last good parameters saved)\n";
        return exit_numerical;
    }
    return exit_ok;
}

int cmd_eval(const Common &c, const std::string &model_path) {
    auto cfg = load_config(c);
    apply_overrides(cfg, c);
    Diagnostics diag;
    if (!model_path.empty()) {
        require_path(model_path);
    }
    const auto rows = load_rows(cfg, nullptr, diag);
    const auto dir = output_dir(c, cfg);

    if (!model_path.empty()) {
        const auto model = io::load_model(model_path);
        const auto cells = data::split_by_cell(data::cell_ids(rows), cfg.data.split, &diag);
        const bool has_test = !cells.test.empty();
        auto subset = data::rows_for(rows, has_test ? cells.test : cells.val);
        if (subset.empty()) {
            throw DataError("eval: no evaluation cells in the split");
        }
        eval::apply_time_scale(subset, model.t_scale);
        const auto set = pinn::prepare(model, subset);
        Eigen::VectorXd pred = pinn::predict(model, set);
        if (cfg.report.clamp) {
            pred = pred.cwiseMax(0.0).cwiseMin(1.2);
        }
        eval::MetricReport rep;
        rep.dataset = cfg.data.tag;
        rep.variant = pinn::to_string(model.variant);
        rep.split = has_test ? "test" : "val";
        rep.seed = model.config.seed;
        rep.mape = eval::mape(eval::view(pred), eval::view(set.y));
        rep.rmse = eval::rmse(eval::view(pred), eval::view(set.y));
        rep.n_samples = set.size();
        eval::write_reports({rep}, dir / "report.csv");
        const auto predictions = eval::prediction_rows(set, pred);
        eval::write_predictions(predictions, dir / "predictions.csv");
        if (cfg.report.plot) {
            eval::write_svg(predictions, dir / "predictions.svg", cfg.data.tag + " " + rep.variant);
        }
        report(diag);
        std::cout << rep.variant << " " << rep.split << " rmse " << csv::format(rep.rmse) << " mape "
                  << csv::format(rep.mape) << '\n';
        return exit_ok;
    }

    const auto result = eval::run_experiment(rows, cfg.experiment());
    eval::write_reports(result.reports, dir / "report.csv");
    bool any_ok = false;
    for (const auto &run : result.runs) {
        if (run.report.failed) {
            continue;
        }
        any_ok = true;
        const auto stem = pinn::to_string(run.variant) + "_seed" + std::to_string(run.seed);
        eval::write_predictions(run.predictions, dir / ("predictions_" + stem + ".csv"));
        if (cfg.report.plot) {
            eval::write_svg(run.predictions, dir / ("predictions_" + stem + ".svg"),
                            cfg.data.tag + " " + stem);
        }
    }
    report(diag);
    report(result.diagnostics);
    for (const auto &r : result.reports) {
        std::cout << r.variant << " seed " << (r.seed ? std::to_string(*r.seed) : "mean") << " rmse "
                  << eval::format_metric(r.rmse) << '\n';
    }
    return any_ok ? exit_ok : exit_numerical;
}

int cmd_transfer(const Common &c) {
    auto cfg = load_config(c);
    apply_overrides(cfg, c);
    const auto &tc = cfg.transfer;
    if (tc.corpora.size() < 2) {
        throw InvalidInput("transfer: [transfer] corpora needs at least two entries");
    }
    Diagnostics diag;
    std::vector<eval::Corpus> corpora;
    for (std::size_t i = 0; i < tc.corpora.size(); ++i) {
        const fs::path p = tc.corpora[i];
        require_path(p);
        eval::Corpus corpus;
        corpus.tag = tc.tags.empty() ? p.filename().string() : tc.tags[i];
        if (fs::is_directory(p)) {
            corpus.rows = load_source(p.string(), "", cfg, nullptr, diag);
        } else {
            corpus.rows = load_source("", p.string(), cfg, nullptr, diag);
        }
        corpora.push_back(std::move(corpus));
    }
    eval::TransferConfig t;
    t.base = cfg.experiment();
    t.source_epochs = tc.source_epochs;
    t.seed = tc.seed;
    const auto matrix = eval::run_transfer(corpora, t, &diag);
    const auto dir = output_dir(c, cfg);
    eval::write_transfer(matrix, dir / "transfer.csv");
    report(diag);
    bool any_ok = false;
    for (const auto &e : matrix.entries) {
        any_ok = any_ok || !e.failed;
        std::cout << e.source << " -> " << e.target << " source_only "
                  << eval::format_metric(e.source_only_rmse) << " fine_tuned "
                  << eval::format_metric(e.fine_tuned_rmse) << '\n';
    }
    return any_ok ? exit_ok : exit_numerical;
}

int cmd_kernel(const Common &c) {
    auto cfg = load_config(c);
    apply_overrides(cfg, c);
    Diagnostics diag;
    const auto rows = load_rows(cfg, nullptr, diag);
    std::vector<std::vector<double>> xs;
    xs.reserve(rows.size());
    for (const auto &r : rows) {
        xs.push_back(r.x);
    }
    const auto scaler = quantum::MinMaxScaler::fit(xs);
    std::vector<quantum::ScaledFeatures> scaled;
    scaled.reserve(rows.size());
    for (const auto &x : xs) {
        scaled.push_back(scaler.scale(x));
    }
    const auto k = quantum::gram(cfg.quantum.feature_map, scaled);
    const auto dir = output_dir(c, cfg);
    auto out = csv::open_output((dir / "kernel.csv").string());
    out << "id";
    for (const auto &r : rows) {
        out << ',' << pinn::sample_id(r.cell_id, r.cycle_index);
    }
    out << '\n';
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out << pinn::sample_id(rows[i].cell_id, rows[i].cycle_index);
        for (std::size_t j = 0; j < rows.size(); ++j) {
            out << ',' << csv::format(k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        }
        out << '\n';
    }
    report(diag);
    return exit_ok;
}

void add_common(CLI::App *cmd, Common &c, bool seed, bool variant) {
    cmd->add_option("--config", c.config, "Run configuration (INI)");
    cmd->add_option("--out", c.out, "Output directory");
    cmd->add_option("--data", c.data, "Dataset directory or *.csv feature file (overrides [data])");
    if (seed) {
        cmd->add_option("--seed", c.seed, "Seed (overrides the configuration)");
    }
    if (variant) {
        cmd->add_option("--variant", c.variant, "qpinn, pinn_baseline or mlp_baseline");
    }
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"qpinn: battery state-of-health estimation with quantum feature maps"};
    app.require_subcommand(1);
    Common common;

    auto *synth = app.add_subcommand("synth", "Generate a synthetic capacity-fade corpus");
    data::SynthParams sp;
    synth->add_option("--out", common.out, "Output directory")->required();
    synth->add_option("--seed", common.seed, "Generator seed");
    synth->add_option("--cells", sp.n_cells, "Number of cells")->capture_default_str();
    synth->add_option("--cycles", sp.cycles, "Cycles per cell")->capture_default_str();
    synth->add_option("--label-noise", sp.label_noise, "Capacity label noise")->capture_default_str();
    synth->add_option("--a-min", sp.a_min, "Fade depth lower bound")->capture_default_str();
    synth->add_option("--a-max", sp.a_max, "Fade depth upper bound")->capture_default_str();
    synth->add_option("--b-min", sp.b_min, "Fade exponent lower bound")->capture_default_str();
    synth->add_option("--b-max", sp.b_max, "Fade exponent upper bound")->capture_default_str();
    synth->add_option("--voltage-noise", sp.voltage_noise_v, "Voltage sensor noise (V)")->capture_default_str();
    synth->add_option("--current-noise", sp.current_noise_a, "Current sensor noise (A)")->capture_default_str();
    synth->add_option("--temperature-noise", sp.temperature_noise_c, "Temperature sensor noise (C)")
        ->capture_default_str();
    synth->add_option("--prefix", sp.cell_prefix, "Cell id prefix")->capture_default_str();

    auto *ingest = app.add_subcommand("ingest", "Validate a dataset and re-emit canonical CSVs");
    add_common(ingest, common, false, false);
    auto *featurize = app.add_subcommand("featurize", "Write per-cycle descriptors as a feature CSV");
    add_common(featurize, common, false, false);
    auto *train = app.add_subcommand("train", "Train one model and write model, history and manifest");
    add_common(train, common, true, true);
    auto *evaluate = app.add_subcommand("eval", "Evaluate a model, or run the seed/variant experiment");
    add_common(evaluate, common, true, true);
    std::string model_path;
    evaluate->add_option("--model", model_path, "Trained model file");
    auto *transfer = app.add_subcommand("transfer", "Cross-corpus source-only and fine-tuned RMSE");
    add_common(transfer, common, true, true);
    auto *kernel = app.add_subcommand("kernel", "Quantum-kernel Gram matrix of a feature file");
    add_common(kernel, common, false, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        if (synth->parsed()) {
            return cmd_synth(common, sp);
        }
        if (ingest->parsed()) {
            return cmd_ingest(common);
        }
        if (featurize->parsed()) {
            return cmd_featurize(common);
        }
        if (train->parsed()) {
            return cmd_train(common);
        }
        if (evaluate->parsed()) {
            return cmd_eval(common, model_path);
        }
        if (transfer->parsed()) {
            return cmd_transfer(common);
        }
        if (kernel->parsed()) {
            return cmd_kernel(common);
        }
    } catch (const InvalidInput &e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const DataError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_data;
    } catch (const NumericalFault &e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_numerical;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_data;
    }
    return exit_usage;
}
