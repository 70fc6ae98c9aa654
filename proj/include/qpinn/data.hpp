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
 * @file data.hpp
 * Canonical cycle-level battery records, CSV ingestion and emission,
 * per-cycle descriptor extraction, and cell-level splits.
 *
 * Canonical files: a cycle series CSV with header
 * `cell_id,cycle_index,time_s,voltage_v,current_a,temperature_c` and a
 * capacity CSV with header
 * `cell_id,cycle_index,discharge_capacity_ah,nominal_capacity_ah`
 * (nominal may be left empty). Positive current means charging.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "random.hpp"

namespace qpinn::data {

struct Sample {
    double time_s = 0.0;
    double voltage_v = 0.0;
    double current_a = 0.0;
    double temperature_c = 0.0;

    bool operator==(const Sample &) const = default;
};

struct CycleRecord {
    std::string cell_id;
    long cycle_index = 0;
    std::vector<Sample> samples;
    double discharge_capacity_ah = 0.0;

    bool operator==(const CycleRecord &) const = default;
};

struct CellTrace {
    std::string cell_id;
    double nominal_capacity_ah = 0.0;
    std::string chemistry;
    std::vector<CycleRecord> cycles;

    bool operator==(const CellTrace &) const = default;
};

inline constexpr std::size_t descriptor_count = 13;

inline const std::array<std::string, descriptor_count> &descriptor_names() {
    static const std::array<std::string, descriptor_count> names = {
        "voltage_mean",   "voltage_std",        "voltage_min",    "voltage_max",
        "voltage_slope",  "current_mean",       "current_std",    "temperature_mean",
        "temperature_std", "temperature_max",   "charge_duration_s", "charge_throughput_ah",
        "charge_energy_wh"};
    return names;
}

struct FeatureRow {
    std::string cell_id;
    long cycle_index = 0;
    double t = 0.0;
    std::vector<double> x;
    double soh = 0.0;

    bool operator==(const FeatureRow &) const = default;
};

enum class Layout {
    canonical,
    negated_current, ///< source files use negative current for charging
};

inline Layout layout_from_string(const std::string &s) {
    if (s == "canonical") {
        return Layout::canonical;
    }
    if (s == "negated_current") {
        return Layout::negated_current;
    }
    throw InvalidInput("unknown dataset layout '" + s + "'");
}

struct IngestResult {
    std::vector<CellTrace> traces;
    Diagnostics diagnostics;
    std::size_t malformed_rows = 0;
    std::size_t dropped_cycles = 0;

    [[nodiscard]] std::size_t sample_count() const {
        std::size_t n = 0;
        for (const auto &t : traces) {
            for (const auto &c : t.cycles) {
                n += c.samples.size();
            }
        }
        return n;
    }
};

namespace detail {

struct CapacityEntry {
    double discharge = 0.0;
    std::optional<double> nominal;
    std::string chemistry;
};

inline std::string where(const std::filesystem::path &p, std::size_t line) {
    return p.string() + ":" + std::to_string(line);
}

} // namespace detail

/// Reads canonical series and capacity files. Malformed rows are skipped and counted.
inline IngestResult ingest_files(const std::vector<std::filesystem::path> &cycle_files,
                                 const std::filesystem::path &capacity_file,
                                 Layout layout = Layout::canonical) {
    IngestResult result;
    auto &diag = result.diagnostics;

    std::map<std::pair<std::string, long>, detail::CapacityEntry> capacity;
    {
        auto in = csv::open_input(capacity_file.string());
        std::string line;
        if (!std::getline(in, line)) {
            throw DataError(capacity_file.string() + ":1: empty file");
        }
        const csv::Header header(line);
        const auto cols = header.require(
            {"cell_id", "cycle_index", "discharge_capacity_ah", "nominal_capacity_ah"},
            capacity_file.string());
        const int chem_col = header.find("chemistry");
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (csv::trim(line).empty()) {
                continue;
            }
            const auto f = csv::split(line);
            long cycle = 0;
            detail::CapacityEntry e;
            double nominal = 0.0;
            const auto nominal_text = f.size() == header.size() ? csv::trim(f[cols[3]]) : "";
            if (f.size() != header.size() || csv::trim(f[cols[0]]).empty() ||
                !csv::parse(f[cols[1]], cycle) || !csv::parse(f[cols[2]], e.discharge) ||
                (!nominal_text.empty() && !csv::parse(nominal_text, nominal))) {
                ++result.malformed_rows;
                diag.warn(detail::where(capacity_file, lineno) + ": malformed capacity row");
                continue;
            }
            if (!nominal_text.empty()) {
                e.nominal = nominal;
            }
            if (chem_col >= 0) {
                e.chemistry = std::string(csv::trim(f[static_cast<std::size_t>(chem_col)]));
            }
            capacity[{std::string(csv::trim(f[cols[0]])), cycle}] = std::move(e);
        }
    }

    std::map<std::string, std::map<long, CycleRecord>> cells;
    const double sign = layout == Layout::negated_current ? -1.0 : 1.0;
    for (const auto &path : cycle_files) {
        auto in = csv::open_input(path.string());
        std::string line;
        if (!std::getline(in, line)) {
            throw DataError(path.string() + ":1: empty file");
        }
        const csv::Header header(line);
        const auto cols = header.require({"cell_id", "cycle_index", "time_s", "voltage_v",
                                          "current_a", "temperature_c"},
                                         path.string());
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (csv::trim(line).empty()) {
                continue;
            }
            const auto f = csv::split(line);
            long cycle = 0;
            Sample s;
            if (f.size() != header.size() || csv::trim(f[cols[0]]).empty() ||
                !csv::parse(f[cols[1]], cycle) || !csv::parse(f[cols[2]], s.time_s) ||
                !csv::parse(f[cols[3]], s.voltage_v) || !csv::parse(f[cols[4]], s.current_a) ||
                !csv::parse(f[cols[5]], s.temperature_c) || cycle < 0) {
                ++result.malformed_rows;
                diag.warn(detail::where(path, lineno) + ": malformed sample row");
                continue;
            }
            s.current_a *= sign;
            const std::string cell(csv::trim(f[cols[0]]));
            auto &rec = cells[cell][cycle];
            rec.cell_id = cell;
            rec.cycle_index = cycle;
            rec.samples.push_back(s);
        }
    }

    for (auto &[cell_id, cycles] : cells) {
        CellTrace trace;
        trace.cell_id = cell_id;
        std::optional<double> nominal;
        for (auto &[index, rec] : cycles) {
            const std::string tag = cell_id + " cycle " + std::to_string(index);
            if (rec.samples.size() < 2) {
                diag.warn(tag + ": fewer than 2 samples; dropped");
                ++result.dropped_cycles;
                continue;
            }
            bool monotone = true;
            for (std::size_t i = 1; i < rec.samples.size(); ++i) {
                monotone = monotone && rec.samples[i].time_s > rec.samples[i - 1].time_s;
            }
            if (!monotone) {
                diag.warn(tag + ": timestamps not strictly increasing; dropped");
                ++result.dropped_cycles;
                continue;
            }
            const auto cap = capacity.find({cell_id, index});
            if (cap == capacity.end()) {
                diag.warn(tag + ": no capacity record; dropped");
                ++result.dropped_cycles;
                continue;
            }
            if (!(cap->second.discharge > 0.0) || !std::isfinite(cap->second.discharge)) {
                diag.warn(tag + ": non-positive discharge capacity; dropped");
                ++result.dropped_cycles;
                continue;
            }
            rec.discharge_capacity_ah = cap->second.discharge;
            if (!nominal && cap->second.nominal) {
                nominal = cap->second.nominal;
            }
            if (trace.chemistry.empty()) {
                trace.chemistry = cap->second.chemistry;
            }
            trace.cycles.push_back(std::move(rec));
        }
        if (trace.cycles.empty()) {
            diag.warn(cell_id + ": no valid cycles; cell dropped");
            continue;
        }
        if (nominal && *nominal > 0.0) {
            trace.nominal_capacity_ah = *nominal;
        } else {
            // fallback: best discharge capacity over the first five cycles
            double best = 0.0;
            for (std::size_t i = 0; i < std::min<std::size_t>(5, trace.cycles.size()); ++i) {
                best = std::max(best, trace.cycles[i].discharge_capacity_ah);
            }
            trace.nominal_capacity_ah = best;
            diag.warn(cell_id + ": nominal capacity missing; using early-cycle maximum");
        }
        result.traces.push_back(std::move(trace));
    }
    return result;
}

/// Ingests a dataset directory: `capacity.csv` plus every `*cycles.csv` file.
inline IngestResult ingest(const std::filesystem::path &dir, Layout layout = Layout::canonical) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw DataError("dataset directory '" + dir.string() + "' does not exist");
    }
    std::vector<fs::path> cycle_files;
    for (const auto &entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (entry.is_regular_file() && name.ends_with("cycles.csv")) {
            cycle_files.push_back(entry.path());
        }
    }
    std::sort(cycle_files.begin(), cycle_files.end());
    if (cycle_files.empty()) {
        throw DataError(dir.string() + ": no *cycles.csv files");
    }
    const auto capacity = dir / "capacity.csv";
    if (!fs::exists(capacity)) {
        throw DataError(capacity.string() + ": missing capacity file");
    }
    return ingest_files(cycle_files, capacity, layout);
}

/// Writes `cycles.csv` and `capacity.csv` in canonical form.
inline void emit(const std::vector<CellTrace> &traces, const std::filesystem::path &dir) {
    std::filesystem::create_directories(dir);
    auto cyc = csv::open_output((dir / "cycles.csv").string());
    auto cap = csv::open_output((dir / "capacity.csv").string());
    cyc << "cell_id,cycle_index,time_s,voltage_v,current_a,temperature_c\n";
    cap << "cell_id,cycle_index,discharge_capacity_ah,nominal_capacity_ah\n";
    for (const auto &t : traces) {
        for (const auto &c : t.cycles) {
            cap << t.cell_id << ',' << c.cycle_index << ',' << csv::format(c.discharge_capacity_ah)
                << ',' << csv::format(t.nominal_capacity_ah) << '\n';
            for (const auto &s : c.samples) {
                cyc << t.cell_id << ',' << c.cycle_index << ',' << csv::format(s.time_s) << ','
                    << csv::format(s.voltage_v) << ',' << csv::format(s.current_a) << ','
                    << csv::format(s.temperature_c) << '\n';
            }
        }
    }
}

namespace detail {

struct Moments {
    double mean = 0.0;
    double std = 0.0;
    double min = 0.0;
    double max = 0.0;
};

template <typename Get> Moments moments(const std::vector<const Sample *> &seg, Get get) {
    Moments m;
    m.min = INFINITY;
    m.max = -INFINITY;
    for (const auto *s : seg) {
        const double v = get(*s);
        m.mean += v;
        m.min = std::min(m.min, v);
        m.max = std::max(m.max, v);
    }
    m.mean /= static_cast<double>(seg.size());
    double var = 0.0;
    for (const auto *s : seg) {
        const double d = get(*s) - m.mean;
        var += d * d;
    }
    m.std = std::sqrt(var / static_cast<double>(seg.size()));
    return m;
}

} // namespace detail

/**
 * The 13 descriptors of one cycle over its charge segment (current > 0), or
 * over the whole cycle when there is no charge segment.
 */
inline std::vector<double> cycle_descriptors(const CycleRecord &cycle, Diagnostics *diag = nullptr) {
    require(cycle.samples.size() >= 2, "cycle_descriptors: need at least 2 samples");
    std::vector<const Sample *> seg;
    std::vector<bool> in_seg(cycle.samples.size(), false);
    for (std::size_t i = 0; i < cycle.samples.size(); ++i) {
        if (cycle.samples[i].current_a > 0.0) {
            seg.push_back(&cycle.samples[i]);
            in_seg[i] = true;
        }
    }
    if (seg.empty()) {
        if (diag != nullptr) {
            diag->warn(cycle.cell_id + " cycle " + std::to_string(cycle.cycle_index) +
                       ": no charge segment; using whole cycle");
        }
        for (std::size_t i = 0; i < cycle.samples.size(); ++i) {
            seg.push_back(&cycle.samples[i]);
            in_seg[i] = true;
        }
    }

    const auto v = detail::moments(seg, [](const Sample &s) { return s.voltage_v; });
    const auto c = detail::moments(seg, [](const Sample &s) { return s.current_a; });
    const auto temp = detail::moments(seg, [](const Sample &s) { return s.temperature_c; });

    // least-squares slope of voltage against time
    double t_mean = 0.0;
    for (const auto *s : seg) {
        t_mean += s->time_s;
    }
    t_mean /= static_cast<double>(seg.size());
    double sxx = 0.0;
    double sxy = 0.0;
    for (const auto *s : seg) {
        sxx += (s->time_s - t_mean) * (s->time_s - t_mean);
        sxy += (s->time_s - t_mean) * (s->voltage_v - v.mean);
    }
    const double slope = sxx > 0.0 ? sxy / sxx : 0.0;

    // trapezoid integrals over adjacent samples inside the segment
    double charge_as = 0.0;
    double energy_ws = 0.0;
    for (std::size_t i = 1; i < cycle.samples.size(); ++i) {
        if (!in_seg[i] || !in_seg[i - 1]) {
            continue;
        }
        const auto &a = cycle.samples[i - 1];
        const auto &b = cycle.samples[i];
        const double dt = b.time_s - a.time_s;
        charge_as += 0.5 * (a.current_a + b.current_a) * dt;
        energy_ws += 0.5 * (a.voltage_v * a.current_a + b.voltage_v * b.current_a) * dt;
    }
    const double duration = seg.back()->time_s - seg.front()->time_s;

    return {v.mean,    v.std,    v.min,     v.max,        slope,
            c.mean,    c.std,    temp.mean, temp.std,     temp.max,
            duration,  charge_as / 3600.0,  energy_ws / 3600.0};
}

/// Feature rows for every cycle of a trace; t = cycle_index / t_scale.
inline std::vector<FeatureRow> extract_features(const CellTrace &trace, double t_scale,
                                                Diagnostics *diag = nullptr) {
    require(t_scale > 0.0, "extract_features: time scale must be positive");
    require(trace.nominal_capacity_ah > 0.0, "extract_features: nominal capacity must be positive");
    std::vector<FeatureRow> rows;
    rows.reserve(trace.cycles.size());
    for (const auto &cycle : trace.cycles) {
        FeatureRow row;
        row.cell_id = trace.cell_id;
        row.cycle_index = cycle.cycle_index;
        row.t = static_cast<double>(cycle.cycle_index) / t_scale;
        row.x = cycle_descriptors(cycle, diag);
        row.soh = cycle.discharge_capacity_ah / trace.nominal_capacity_ah;
        for (double v : row.x) {
            if (!std::isfinite(v)) {
                throw NumericalFault(trace.cell_id + " cycle " +
                                     std::to_string(cycle.cycle_index) + ": non-finite descriptor");
            }
        }
        if (diag != nullptr && row.soh > 1.2) {
            diag->warn(trace.cell_id + " cycle " + std::to_string(cycle.cycle_index) +
                       ": SOH label above 1.2");
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline long max_cycle_index(const std::vector<CellTrace> &traces) {
    long m = 0;
    for (const auto &t : traces) {
        for (const auto &c : t.cycles) {
            m = std::max(m, c.cycle_index);
        }
    }
    return m;
}

inline std::vector<FeatureRow> extract_all(const std::vector<CellTrace> &traces, double t_scale,
                                           Diagnostics *diag = nullptr) {
    std::vector<FeatureRow> out;
    for (const auto &t : traces) {
        auto rows = extract_features(t, t_scale, diag);
        out.insert(out.end(), std::make_move_iterator(rows.begin()),
                   std::make_move_iterator(rows.end()));
    }
    return out;
}

/// Keeps only the descriptors whose mask entry is set.
inline void select_descriptors(std::vector<FeatureRow> &rows, const std::vector<bool> &mask) {
    for (auto &r : rows) {
        require(mask.size() == r.x.size(), "select_descriptors: mask length mismatch");
        std::vector<double> kept;
        for (std::size_t j = 0; j < mask.size(); ++j) {
            if (mask[j]) {
                kept.push_back(r.x[j]);
            }
        }
        r.x = std::move(kept);
    }
}

inline void write_features(const std::vector<FeatureRow> &rows, const std::filesystem::path &file) {
    auto out = csv::open_output(file.string());
    const std::size_t d = rows.empty() ? descriptor_count : rows.front().x.size();
    out << "cell_id,cycle_index,t,soh";
    for (std::size_t j = 0; j < d; ++j) {
        out << ",f" << (j + 1 < 10 ? "0" : "") << (j + 1);
    }
    out << '\n';
    for (const auto &r : rows) {
        out << r.cell_id << ',' << r.cycle_index << ',' << csv::format(r.t) << ','
            << csv::format(r.soh);
        for (double v : r.x) {
            out << ',' << csv::format(v);
        }
        out << '\n';
    }
}

inline std::vector<FeatureRow> read_features(const std::filesystem::path &file) {
    auto in = csv::open_input(file.string());
    std::string line;
    if (!std::getline(in, line)) {
        throw DataError(file.string() + ":1: empty file");
    }
    const csv::Header header(line);
    const auto cols = header.require({"cell_id", "cycle_index", "t", "soh"}, file.string());
    std::vector<int> feature_cols;
    for (std::size_t j = 1; j < 100; ++j) {
        const int c = header.find("f" + std::string(j < 10 ? "0" : "") + std::to_string(j));
        if (c < 0) {
            break;
        }
        feature_cols.push_back(c);
    }
    if (feature_cols.empty()) {
        throw DataError(file.string() + ":1: no feature columns f01..");
    }
    std::vector<FeatureRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (csv::trim(line).empty()) {
            continue;
        }
        const auto f = csv::split(line);
        FeatureRow r;
        bool ok = f.size() == header.size() && csv::parse(f[cols[1]], r.cycle_index) &&
                  csv::parse(f[cols[2]], r.t) && csv::parse(f[cols[3]], r.soh);
        r.x.resize(feature_cols.size());
        for (std::size_t j = 0; ok && j < feature_cols.size(); ++j) {
            ok = csv::parse(f[static_cast<std::size_t>(feature_cols[j])], r.x[j]);
        }
        if (!ok) {
            throw DataError(file.string() + ":" + std::to_string(lineno) + ": malformed feature row");
        }
        r.cell_id = std::string(csv::trim(f[cols[0]]));
        rows.push_back(std::move(r));
    }
    return rows;
}

struct SplitSpec {
    std::uint64_t seed = 0;
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;

    void validate() const {
        require(train > 0.0 && val >= 0.0 && test >= 0.0, "SplitSpec: fractions must be >= 0");
        require(std::abs(train + val + test - 1.0) <= 1e-9, "SplitSpec: fractions must sum to 1");
    }
};

struct CellSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

/**
 * Seeded shuffle of the sorted cell ids, then contiguous cuts: floor(train*n)
 * cells, floor(val*n) cells, remainder to test. With fewer than three cells
 * the split degrades to train/val.
 */
inline CellSplit split_by_cell(std::vector<std::string> cell_ids, const SplitSpec &spec,
                               Diagnostics *diag = nullptr) {
    spec.validate();
    if (cell_ids.empty()) {
        throw InvalidInput("split_by_cell: no cells");
    }
    std::sort(cell_ids.begin(), cell_ids.end());
    cell_ids.erase(std::unique(cell_ids.begin(), cell_ids.end()), cell_ids.end());
    Rng rng(spec.seed);
    rng.shuffle(cell_ids);
    const std::size_t n = cell_ids.size();
    CellSplit out;
    if (n < 3) {
        if (diag != nullptr) {
            diag->warn("split_by_cell: fewer than 3 cells; no test split");
        }
        out.train.push_back(cell_ids[0]);
        if (n == 2) {
            out.val.push_back(cell_ids[1]);
        }
        return out;
    }
    const auto cut = [n](double f) {
        return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
    };
    std::size_t n_train = std::max<std::size_t>(1, cut(spec.train));
    std::size_t n_val = cut(spec.val);
    n_train = std::min(n_train, n);
    n_val = std::min(n_val, n - n_train);
    out.train.assign(cell_ids.begin(), cell_ids.begin() + static_cast<long>(n_train));
    out.val.assign(cell_ids.begin() + static_cast<long>(n_train),
                   cell_ids.begin() + static_cast<long>(n_train + n_val));
    out.test.assign(cell_ids.begin() + static_cast<long>(n_train + n_val), cell_ids.end());
    return out;
}

inline std::vector<std::string> cell_ids(const std::vector<CellTrace> &traces) {
    std::vector<std::string> ids;
    for (const auto &t : traces) {
        ids.push_back(t.cell_id);
    }
    return ids;
}

inline std::vector<std::string> cell_ids(const std::vector<FeatureRow> &rows) {
    std::set<std::string> ids;
    for (const auto &r : rows) {
        ids.insert(r.cell_id);
    }
    return {ids.begin(), ids.end()};
}

/// Rows whose cell id is in `cells`, in their original order.
inline std::vector<FeatureRow> rows_for(const std::vector<FeatureRow> &rows,
                                        const std::vector<std::string> &cells) {
    const std::set<std::string> keep(cells.begin(), cells.end());
    std::vector<FeatureRow> out;
    for (const auto &r : rows) {
        if (keep.count(r.cell_id) != 0U) {
            out.push_back(r);
        }
    }
    return out;
}

} // namespace qpinn::data
