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
 * @file config.hpp
 * Run configuration: an INI document with the sections [data], [features],
 * [quantum], [model], [train], [transfer] and [report]. Unknown sections and
 * keys are rejected; every key is optional and defaults as documented in the
 * README.
 */

#include <charconv>
#include <cstdint>
#include <fstream>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "csv.hpp"
#include "data.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "nystrom.hpp"
#include "pinn.hpp"

namespace qpinn::config {

using pinn::Index;

struct DataSection {
    std::string path;     ///< canonical dataset directory
    std::string features; ///< feature CSV, used instead of `path` when set
    std::string layout = "canonical";
    std::string tag = "dataset";
    data::SplitSpec split{};
};

struct TransferSection {
    std::vector<std::string> corpora; ///< dataset directories or feature CSVs
    std::vector<std::string> tags;
    int source_epochs = 200;
    std::uint64_t seed = 0;
};

struct ReportSection {
    std::string output = "out";
    bool plot = false;
    bool timing = false;
    bool clamp = false;
    std::vector<std::uint64_t> seeds{0};
};

struct RunConfig {
    DataSection data;
    std::vector<bool> descriptors = std::vector<bool>(data::descriptor_count, true);
    pinn::QuantumConfig quantum{};
    std::vector<pinn::Variant> variants{pinn::Variant::qpinn};
    pinn::Architecture architecture{};
    pinn::TrainConfig train{};
    TransferSection transfer;
    ReportSection report;

    /// Experiment settings for the given data tag.
    [[nodiscard]] eval::ExperimentConfig experiment() const {
        eval::ExperimentConfig e;
        e.dataset = data.tag;
        e.split = data.split;
        e.variants = variants;
        e.seeds = report.seeds;
        e.architecture = architecture;
        e.quantum = quantum;
        e.train = train;
        e.clamp_predictions = report.clamp;
        e.timing = report.timing;
        return e;
    }
};

namespace detail {

using boost::property_tree::ptree;

inline std::vector<std::string> split_list(const std::string &s) {
    std::vector<std::string> out;
    for (auto part : csv::split(s, ',')) {
        const auto t = csv::trim(part);
        if (!t.empty()) {
            out.emplace_back(t);
        }
    }
    return out;
}

class Section {
  public:
    Section(std::string name, const ptree *tree) : name_(std::move(name)), tree_(tree) {}

    bool has(const std::string &key) {
        seen_.insert(key);
        return tree_ != nullptr && tree_->find(key) != tree_->not_found();
    }

    std::string text(const std::string &key) { return has(key) ? raw(key) : std::string(); }

    void get(const std::string &key, std::string &out) {
        if (has(key)) {
            out = raw(key);
        }
    }

    void get(const std::string &key, double &out) {
        if (has(key) && !csv::parse(raw(key), out)) {
            fail(key, "expected a number");
        }
    }

    void get(const std::string &key, int &out) {
        long v = 0;
        if (has(key)) {
            if (!csv::parse(raw(key), v) || v < INT32_MIN || v > INT32_MAX) {
                fail(key, "expected an integer");
            }
            out = static_cast<int>(v);
        }
    }

    void get(const std::string &key, std::uint64_t &out) {
        if (has(key)) {
            out = parse_u64(key, raw(key));
        }
    }

    void get(const std::string &key, bool &out) {
        if (!has(key)) {
            return;
        }
        const auto v = raw(key);
        if (v == "true" || v == "1" || v == "yes" || v == "on") {
            out = true;
        } else if (v == "false" || v == "0" || v == "no" || v == "off") {
            out = false;
        } else {
            fail(key, "expected a boolean");
        }
    }

    void get(const std::string &key, std::vector<Index> &out) {
        if (!has(key)) {
            return;
        }
        out.clear();
        for (const auto &item : split_list(raw(key))) {
            out.push_back(static_cast<Index>(parse_u64(key, item)));
            if (out.back() < 1) {
                fail(key, "layer widths must be positive");
            }
        }
    }

    [[noreturn]] void fail(const std::string &key, const std::string &why) const {
        throw InvalidInput("config [" + name_ + "] " + key + ": " + why);
    }

    /// Rejects keys that were never asked for.
    void finish() const {
        if (tree_ == nullptr) {
            return;
        }
        for (const auto &kv : *tree_) {
            if (seen_.count(kv.first) == 0U) {
                throw InvalidInput("config [" + name_ + "]: unknown key '" + kv.first + "'");
            }
        }
    }

  private:
    std::string raw(const std::string &key) const {
        return std::string(csv::trim(tree_->get<std::string>(key)));
    }

    std::uint64_t parse_u64(const std::string &key, const std::string &v) const {
        std::uint64_t out = 0;
        const auto *end = v.data() + v.size();
        const auto r = std::from_chars(v.data(), end, out);
        if (v.empty() || r.ec != std::errc() || r.ptr != end) {
            fail(key, "expected a non-negative integer");
        }
        return out;
    }

    std::string name_;
    const ptree *tree_;
    std::set<std::string> seen_;
};

} // namespace detail

inline RunConfig parse(const std::string &text, const std::string &origin = "config") {
    using boost::property_tree::ptree;
    ptree tree;
    try {
        std::istringstream in(text);
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error &e) {
        throw InvalidInput(origin + ": " + e.message() + " at line " + std::to_string(e.line()));
    }
    static const std::set<std::string> sections = {"data",     "features", "quantum", "model",
                                                   "train",    "transfer", "report"};
    for (const auto &kv : tree) {
        if (sections.count(kv.first) == 0U) {
            throw InvalidInput(origin + ": unknown section [" + kv.first + "]");
        }
        if (!kv.second.data().empty()) {
            throw InvalidInput(origin + ": key '" + kv.first + "' outside a section");
        }
    }
    auto section = [&](const std::string &name) {
        const auto it = tree.find(name);
        return detail::Section(name, it == tree.not_found() ? nullptr : &it->second);
    };

    RunConfig c;
    {
        auto s = section("data");
        s.get("path", c.data.path);
        s.get("features", c.data.features);
        s.get("layout", c.data.layout);
        (void)data::layout_from_string(c.data.layout);
        s.get("tag", c.data.tag);
        s.get("split_seed", c.data.split.seed);
        s.get("train_fraction", c.data.split.train);
        s.get("val_fraction", c.data.split.val);
        s.get("test_fraction", c.data.split.test);
        c.data.split.validate();
        s.finish();
    }
    {
        auto s = section("features");
        const auto &names = data::descriptor_names();
        for (std::size_t j = 0; j < names.size(); ++j) {
            bool on = true;
            s.get(names[j], on);
            c.descriptors[j] = on;
        }
        bool any = false;
        for (bool b : c.descriptors) {
            any = any || b;
        }
        if (!any) {
            s.fail("*", "at least one descriptor must be enabled");
        }
        s.finish();
    }
    {
        auto s = section("quantum");
        s.get("n_qubits", c.quantum.feature_map.n_qubits);
        s.get("depth", c.quantum.feature_map.depth);
        s.get("ring_entanglement", c.quantum.feature_map.ring_entanglement);
        s.get("landmarks", c.quantum.landmarks);
        s.get("eigen_floor", c.quantum.eigen_floor);
        if (s.has("landmark_method")) {
            c.quantum.landmark_method = nystrom::landmark_method_from_string(s.text("landmark_method"));
        }
        s.get("landmark_seed", c.quantum.landmark_seed);
        c.quantum.feature_map.validate();
        if (c.quantum.landmarks < 1) {
            s.fail("landmarks", "must be >= 1");
        }
        if (!(c.quantum.eigen_floor > 0.0)) {
            s.fail("eigen_floor", "must be positive");
        }
        s.finish();
    }
    {
        auto s = section("model");
        if (s.has("variant")) {
            c.variants.clear();
            for (const auto &v : detail::split_list(s.text("variant"))) {
                c.variants.push_back(pinn::variant_from_string(v));
            }
            if (c.variants.empty()) {
                s.fail("variant", "no variant given");
            }
        }
        s.get("solution_hidden", c.architecture.solution_hidden);
        s.get("dynamics_hidden", c.architecture.dynamics_hidden);
        s.get("encoder_hidden", c.architecture.encoder_hidden);
        int enc = static_cast<int>(c.architecture.encoder_output);
        s.get("encoder_output", enc);
        if (enc < 1) {
            s.fail("encoder_output", "must be >= 1");
        }
        c.architecture.encoder_output = enc;
        s.finish();
    }
    {
        auto s = section("train");
        auto &t = c.train;
        s.get("epochs", t.epochs);
        s.get("lr", t.lr);
        s.get("plateau_factor", t.plateau_factor);
        s.get("plateau_patience", t.plateau_patience);
        s.get("plateau_threshold", t.plateau_threshold);
        s.get("weight_decay", t.weight_decay);
        s.get("clip_norm", t.clip_norm);
        s.get("alpha", t.alpha);
        s.get("beta", t.beta);
        s.get("batch_size", t.batch_size);
        s.get("block_length", t.block_length);
        s.get("seed", t.seed);
        s.finish();
    }
    {
        auto s = section("transfer");
        if (s.has("corpora")) {
            c.transfer.corpora = detail::split_list(s.text("corpora"));
        }
        if (s.has("tags")) {
            c.transfer.tags = detail::split_list(s.text("tags"));
        }
        s.get("source_epochs", c.transfer.source_epochs);
        s.get("fine_tune_epochs", c.train.fine_tune.epochs);
        s.get("fine_tune_lr", c.train.fine_tune.lr);
        s.get("freeze_dynamics", c.train.fine_tune.freeze_dynamics);
        s.get("seed", c.transfer.seed);
        if (!c.transfer.tags.empty() && c.transfer.tags.size() != c.transfer.corpora.size()) {
            s.fail("tags", "must match the number of corpora");
        }
        if (c.transfer.source_epochs < 0) {
            s.fail("source_epochs", "must be >= 0");
        }
        s.finish();
    }
    {
        auto s = section("report");
        s.get("output", c.report.output);
        s.get("plot", c.report.plot);
        s.get("timing", c.report.timing);
        s.get("clamp", c.report.clamp);
        if (s.has("seeds")) {
            c.report.seeds.clear();
            for (const auto &v : detail::split_list(s.text("seeds"))) {
                std::uint64_t seed = 0;
                const auto r = std::from_chars(v.data(), v.data() + v.size(), seed);
                if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
                    s.fail("seeds", "expected comma-separated non-negative integers");
                }
                c.report.seeds.push_back(seed);
            }
            if (c.report.seeds.empty()) {
                s.fail("seeds", "no seeds given");
            }
        }
        s.finish();
    }
    c.train.validate();
    return c;
}

inline RunConfig load(const std::filesystem::path &file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw InvalidInput("config file '" + file.string() + "' not found");
    }
    std::ostringstream s;
    s << in.rdbuf();
    return parse(s.str(), file.string());
}

namespace detail {

template <typename T> std::string join(const std::vector<T> &v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i > 0) {
            out += ",";
        }
        if constexpr (std::is_same_v<T, std::string>) {
            out += v[i];
        } else {
            out += std::to_string(v[i]);
        }
    }
    return out;
}

inline std::string flag(bool b) { return b ? "true" : "false"; }

} // namespace detail

/// Canonical text of a configuration; parse(to_ini(c)) reproduces c.
inline std::string to_ini(const RunConfig &c) {
    using csv::format;
    using detail::flag;
    using detail::join;
    std::ostringstream o;
    o << "[data]\n"
      << "path = " << c.data.path << "\n"
      << "features = " << c.data.features << "\n"
      << "layout = " << c.data.layout << "\n"
      << "tag = " << c.data.tag << "\n"
      << "split_seed = " << c.data.split.seed << "\n"
      << "train_fraction = " << format(c.data.split.train) << "\n"
      << "val_fraction = " << format(c.data.split.val) << "\n"
      << "test_fraction = " << format(c.data.split.test) << "\n\n[features]\n";
    for (std::size_t j = 0; j < data::descriptor_count; ++j) {
        o << data::descriptor_names()[j] << " = " << flag(c.descriptors[j]) << "\n";
    }
    const auto &q = c.quantum;
    o << "\n[quantum]\n"
      << "n_qubits = " << q.feature_map.n_qubits << "\n"
      << "depth = " << q.feature_map.depth << "\n"
      << "ring_entanglement = " << flag(q.feature_map.ring_entanglement) << "\n"
      << "landmarks = " << q.landmarks << "\n"
      << "eigen_floor = " << format(q.eigen_floor) << "\n"
      << "landmark_method = " << nystrom::to_string(q.landmark_method) << "\n"
      << "landmark_seed = " << q.landmark_seed << "\n\n[model]\n";
    std::vector<std::string> variants;
    for (auto v : c.variants) {
        variants.push_back(pinn::to_string(v));
    }
    const auto &a = c.architecture;
    o << "variant = " << join(variants) << "\n"
      << "solution_hidden = " << join(a.solution_hidden) << "\n"
      << "dynamics_hidden = " << join(a.dynamics_hidden) << "\n"
      << "encoder_hidden = " << join(a.encoder_hidden) << "\n"
      << "encoder_output = " << a.encoder_output << "\n\n";
    const auto &t = c.train;
    o << "[train]\n"
      << "epochs = " << t.epochs << "\n"
      << "lr = " << format(t.lr) << "\n"
      << "plateau_factor = " << format(t.plateau_factor) << "\n"
      << "plateau_patience = " << t.plateau_patience << "\n"
      << "plateau_threshold = " << format(t.plateau_threshold) << "\n"
      << "weight_decay = " << format(t.weight_decay) << "\n"
      << "clip_norm = " << format(t.clip_norm) << "\n"
      << "alpha = " << format(t.alpha) << "\n"
      << "beta = " << format(t.beta) << "\n"
      << "batch_size = " << t.batch_size << "\n"
      << "block_length = " << t.block_length << "\n"
      << "seed = " << t.seed << "\n\n"
      << "[transfer]\n"
      << "corpora = " << join(c.transfer.corpora) << "\n"
      << "tags = " << join(c.transfer.tags) << "\n"
      << "source_epochs = " << c.transfer.source_epochs << "\n"
      << "fine_tune_epochs = " << t.fine_tune.epochs << "\n"
      << "fine_tune_lr = " << format(t.fine_tune.lr) << "\n"
      << "freeze_dynamics = " << flag(t.fine_tune.freeze_dynamics) << "\n"
      << "seed = " << c.transfer.seed << "\n\n"
      << "[report]\n"
      << "output = " << c.report.output << "\n"
      << "plot = " << flag(c.report.plot) << "\n"
      << "timing = " << flag(c.report.timing) << "\n"
      << "clamp = " << flag(c.report.clamp) << "\n"
      << "seeds = " << join(c.report.seeds) << "\n";
    return o.str();
}

} // namespace qpinn::config
