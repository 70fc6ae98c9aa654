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


#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <catch_amalgamated.hpp>

#include "qpinn/data.hpp"
#include "qpinn/synth.hpp"

using namespace qpinn;
using namespace qpinn::data;
using Catch::Matchers::WithinAbs;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string &name)
        : path(fs::temp_directory_path() / ("qpinn_test_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write(const fs::path &p, const std::string &text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

CycleRecord constant_cycle(double v, double i, double temp, double duration, int n) {
    CycleRecord c;
    c.cell_id = "c";
    c.discharge_capacity_ah = 1.0;
    for (int k = 0; k < n; ++k) {
        c.samples.push_back({duration * k / (n - 1), v, i, temp});
    }
    return c;
}

std::string two_cell_cycles() {
    std::string s = "cell_id,cycle_index,time_s,voltage_v,current_a,temperature_c\n";
    for (const char *cell : {"A", "B"}) {
        for (int k = 0; k < 3; ++k) {
            for (int j = 0; j < 4; ++j) {
                s += std::string(cell) + "," + std::to_string(k) + "," + std::to_string(10 * j) +
                     ",3." + std::to_string(5 + j) + ",1.0,25\n";
            }
        }
    }
    return s;
}

std::string two_cell_capacity() {
    std::string s = "cell_id,cycle_index,discharge_capacity_ah,nominal_capacity_ah\n";
    for (const char *cell : {"A", "B"}) {
        for (int k = 0; k < 3; ++k) {
            s += std::string(cell) + "," + std::to_string(k) + "," + std::to_string(2.0 - 0.1 * k) +
                 ",2.0\n";
        }
    }
    return s;
}

} // namespace

TEST_CASE("well-formed two-cell fixture ingests without warnings", "[data][ingest]") {
    TempDir dir("ingest_ok");
    write(dir.path / "cycles.csv", two_cell_cycles());
    write(dir.path / "capacity.csv", two_cell_capacity());
    const auto r = ingest(dir.path);
    REQUIRE(r.traces.size() == 2);
    CHECK(r.diagnostics.count() == 0);
    CHECK(r.malformed_rows == 0);
    CHECK(r.traces[0].cell_id == "A");
    CHECK(r.traces[0].cycles.size() == 3);
    CHECK(r.traces[0].nominal_capacity_ah == 2.0);
    CHECK(r.sample_count() == 24);
}

TEST_CASE("non-monotone timestamps drop exactly that cycle", "[data][ingest]") {
    TempDir dir("ingest_nonmono");
    auto cycles = two_cell_cycles();
    // swap time of one sample in cell B cycle 1
    const std::string bad = "B,1,20,3.7,1.0,25\n";
    const auto pos = cycles.find(bad);
    REQUIRE(pos != std::string::npos);
    cycles.replace(pos, bad.size(), "B,1,5,3.7,1.0,25\n");
    write(dir.path / "cycles.csv", cycles);
    write(dir.path / "capacity.csv", two_cell_capacity());
    const auto r = ingest(dir.path);
    CHECK(r.diagnostics.count() == 1);
    CHECK(r.dropped_cycles == 1);
    REQUIRE(r.traces.size() == 2);
    CHECK(r.traces[1].cycles.size() == 2);
    CHECK(r.traces[1].cycles[1].cycle_index == 2);
}

TEST_CASE("malformed rows are counted and cycles with one sample dropped", "[data][ingest]") {
    TempDir dir("ingest_malformed");
    write(dir.path / "cycles.csv",
          "cell_id,cycle_index,time_s,voltage_v,current_a,temperature_c\n"
          "A,0,0,3.6,1,25\nA,0,1,3.7,1,25\nA,0,x,3.7,1,25\nA,1,0,3.6,1,25\n");
    write(dir.path / "capacity.csv",
          "cell_id,cycle_index,discharge_capacity_ah,nominal_capacity_ah\nA,0,1.9,2\nA,1,1.8,2\n");
    const auto r = ingest(dir.path);
    CHECK(r.malformed_rows == 1);
    CHECK(r.dropped_cycles == 1);
    REQUIRE(r.traces.size() == 1);
    CHECK(r.traces[0].cycles.size() == 1);
}

TEST_CASE("missing required column is rejected with file diagnostics", "[data][ingest]") {
    TempDir dir("ingest_missing");
    write(dir.path / "cycles.csv", "cell_id,cycle_index,time_s,voltage_v,current_a\nA,0,0,3.6,1\n");
    write(dir.path / "capacity.csv", two_cell_capacity());
    try {
        (void)ingest(dir.path);
        FAIL("expected DataError");
    } catch (const DataError &e) {
        const std::string msg = e.what();
        CHECK(msg.find("temperature_c") != std::string::npos);
        CHECK(msg.find("cycles.csv:1") != std::string::npos);
    }
    CHECK_THROWS_AS(ingest(dir.path / "nope"), DataError);
}

TEST_CASE("missing nominal capacity falls back to early-cycle maximum", "[data][ingest]") {
    TempDir dir("ingest_nominal");
    write(dir.path / "cycles.csv", two_cell_cycles());
    write(dir.path / "capacity.csv",
          "cell_id,cycle_index,discharge_capacity_ah,nominal_capacity_ah\n"
          "A,0,1.9,\nA,1,1.95,\nA,2,1.7,\nB,0,2,2\nB,1,2,2\nB,2,2,2\n");
    const auto r = ingest(dir.path);
    REQUIRE(r.traces.size() == 2);
    CHECK(r.traces[0].nominal_capacity_ah == 1.95);
    CHECK(r.diagnostics.count() == 1);
}

TEST_CASE("negated-current layout flips the sign convention", "[data][ingest]") {
    TempDir dir("ingest_negated");
    auto cycles = two_cell_cycles();
    write(dir.path / "cycles.csv", cycles);
    write(dir.path / "capacity.csv", two_cell_capacity());
    const auto r = ingest(dir.path, Layout::negated_current);
    CHECK(r.traces[0].cycles[0].samples[0].current_a == -1.0);
    CHECK_THROWS_AS(layout_from_string("bogus"), InvalidInput);
}

TEST_CASE("constant-series descriptors", "[data][features]") {
    Diagnostics diag;
    const auto f = cycle_descriptors(constant_cycle(3.6, 1.0, 25.0, 3600.0, 61), &diag);
    REQUIRE(f.size() == descriptor_count);
    CHECK_THAT(f[0], WithinAbs(3.6, 1e-12));
    CHECK_THAT(f[1], WithinAbs(0.0, 1e-12));
    CHECK_THAT(f[2], WithinAbs(3.6, 1e-12));
    CHECK_THAT(f[3], WithinAbs(3.6, 1e-12));
    CHECK_THAT(f[4], WithinAbs(0.0, 1e-12));
    CHECK_THAT(f[5], WithinAbs(1.0, 1e-12));
    CHECK_THAT(f[10], WithinAbs(3600.0, 1e-9));
    CHECK_THAT(f[11], WithinAbs(1.0, 1e-12));
    CHECK_THAT(f[12], WithinAbs(3.6, 1e-12));
    CHECK(diag.count() == 0);
}

TEST_CASE("voltage slope and charge segment selection", "[data][features]") {
    CycleRecord c;
    c.discharge_capacity_ah = 1.0;
    for (int k = 0; k < 11; ++k) {
        c.samples.push_back({10.0 * k, 3.0 + 0.001 * 10.0 * k, 2.0, 25.0});
    }
    // discharge tail is excluded from the charge segment
    c.samples.push_back({200.0, 3.2, -2.0, 30.0});
    const auto f = cycle_descriptors(c);
    CHECK_THAT(f[4], WithinAbs(0.001, 1e-12));
    CHECK_THAT(f[9], WithinAbs(25.0, 1e-12));
    CHECK_THAT(f[10], WithinAbs(100.0, 1e-12));

    Diagnostics diag;
    const auto g = cycle_descriptors(constant_cycle(3.6, -1.0, 25.0, 100.0, 5), &diag);
    CHECK(diag.count() == 1);
    CHECK_THAT(g[5], WithinAbs(-1.0, 1e-12));
}

TEST_CASE("soh label and time coordinate", "[data][features]") {
    CellTrace t;
    t.cell_id = "A";
    t.nominal_capacity_ah = 2.0;
    auto c = constant_cycle(3.6, 1.0, 25.0, 100.0, 5);
    c.cycle_index = 50;
    c.discharge_capacity_ah = 1.8;
    t.cycles.push_back(c);
    const auto rows = extract_features(t, 100.0);
    REQUIRE(rows.size() == 1);
    CHECK_THAT(rows[0].soh, WithinAbs(0.9, 1e-15));
    CHECK_THAT(rows[0].t, WithinAbs(0.5, 1e-15));
    CHECK(rows[0].x.size() == descriptor_count);
}

TEST_CASE("cell split sizes follow floor/floor/remainder", "[data][split]") {
    auto ids = [](int n) {
        std::vector<std::string> v;
        for (int i = 0; i < n; ++i) {
            v.push_back("c" + std::to_string(i));
        }
        return v;
    };
    const auto s10 = split_by_cell(ids(10), SplitSpec{});
    CHECK(s10.train.size() == 7);
    CHECK(s10.val.size() == 1);
    CHECK(s10.test.size() == 2);
    const auto s100 = split_by_cell(ids(100), SplitSpec{});
    CHECK(s100.train.size() == 70);
    CHECK(s100.val.size() == 15);
    CHECK(s100.test.size() == 15);
    CHECK(s100.train == split_by_cell(ids(100), SplitSpec{}).train);

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SplitSpec spec;
        spec.seed = seed;
        auto input = ids(23);
        std::reverse(input.begin(), input.end());
        const auto s = split_by_cell(input, spec);
        std::set<std::string> all;
        all.insert(s.train.begin(), s.train.end());
        all.insert(s.val.begin(), s.val.end());
        all.insert(s.test.begin(), s.test.end());
        CHECK(all.size() == 23);
        CHECK(s.train.size() + s.val.size() + s.test.size() == 23);
        // input order is irrelevant
        CHECK(s.test == split_by_cell(ids(23), spec).test);
    }

    Diagnostics diag;
    const auto s2 = split_by_cell(ids(2), SplitSpec{}, &diag);
    CHECK(s2.train.size() == 1);
    CHECK(s2.val.size() == 1);
    CHECK(s2.test.empty());
    CHECK(diag.count() == 1);
    CHECK_THROWS_AS(split_by_cell({}, SplitSpec{}), InvalidInput);
    SplitSpec bad;
    bad.val = 0.2;
    CHECK_THROWS_AS(split_by_cell(ids(5), bad), InvalidInput);
}

TEST_CASE("synthetic fade formula and monotone labels", "[data][synth]") {
    CHECK(fade_soh(0.2, 1.0, 50, 100) == 0.9);

    SynthParams p;
    p.n_cells = 4;
    p.cycles = 60;
    p.label_noise = 0.0;
    const auto corpus = synth_generate(p, 7);
    REQUIRE(corpus.traces.size() == 4);
    REQUIRE(corpus.truth.size() == 4);
    for (std::size_t c = 0; c < corpus.traces.size(); ++c) {
        const auto &cycles = corpus.traces[c].cycles;
        REQUIRE(cycles.size() == 60);
        const auto &tr = corpus.truth[c];
        CHECK(tr.a >= p.a_min);
        CHECK(tr.a <= p.a_max);
        CHECK(tr.b >= p.b_min);
        CHECK(tr.b <= p.b_max);
        for (std::size_t k = 0; k < cycles.size(); ++k) {
            const double soh = cycles[k].discharge_capacity_ah / p.nominal_capacity_ah;
            CHECK(soh > 0.0);
            CHECK(soh <= 1.0);
            CHECK_THAT(soh, WithinAbs(fade_soh(tr.a, tr.b, static_cast<long>(k), p.cycles), 1e-15));
            if (k > 0) {
                CHECK(cycles[k].discharge_capacity_ah <= cycles[k - 1].discharge_capacity_ah);
            }
        }
    }
}

TEST_CASE("synthetic corpus is deterministic and validated", "[data][synth]") {
    SynthParams p;
    p.n_cells = 3;
    p.cycles = 20;
    const auto a = synth_generate(p, 11);
    const auto b = synth_generate(p, 11);
    CHECK(a.traces == b.traces);
    CHECK_FALSE(synth_generate(p, 12).traces == a.traces);

    SynthParams bad = p;
    bad.n_cells = 0;
    CHECK_THROWS_AS(synth_generate(bad, 1), InvalidInput);
    bad = p;
    bad.cycles = -3;
    CHECK_THROWS_AS(synth_generate(bad, 1), InvalidInput);
}

TEST_CASE("synthetic descriptors are finite and track soh", "[data][synth][features]") {
    SynthParams p;
    p.n_cells = 3;
    p.cycles = 100;
    const auto corpus = synth_generate(p, 3);
    const auto rows = extract_all(corpus.traces, 100.0);
    REQUIRE(rows.size() == 300);
    for (const auto &r : rows) {
        CHECK(r.x.size() == descriptor_count);
        for (double v : r.x) {
            CHECK(std::isfinite(v));
        }
        CHECK(std::isfinite(r.soh));
    }
    // voltage mean rises with resistance growth; check the correlation sign over one cell
    double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
    const double n = 100.0;
    for (int k = 0; k < 100; ++k) {
        const double x = rows[static_cast<std::size_t>(k)].x[10];
        const double y = rows[static_cast<std::size_t>(k)].soh;
        sx += x;
        sy += y;
        sxy += x * y;
        sxx += x * x;
        syy += y * y;
    }
    const double corr = (sxy - sx * sy / n) / std::sqrt((sxx - sx * sx / n) * (syy - sy * sy / n));
    CHECK(std::abs(corr) > 0.3);
}

TEST_CASE("emit then ingest round-trips traces exactly", "[data][roundtrip]") {
    SynthParams p;
    p.n_cells = 2;
    p.cycles = 5;
    const auto corpus = synth_generate(p, 5);
    TempDir dir("roundtrip");
    emit(corpus.traces, dir.path);
    auto r = ingest(dir.path);
    CHECK(r.diagnostics.count() == 0);
    REQUIRE(r.traces.size() == corpus.traces.size());
    for (std::size_t i = 0; i < r.traces.size(); ++i) {
        r.traces[i].chemistry = corpus.traces[i].chemistry;
        CHECK(r.traces[i] == corpus.traces[i]);
    }
}

TEST_CASE("feature CSV round-trips and descriptor masks apply", "[data][features]") {
    SynthParams p;
    p.n_cells = 2;
    p.cycles = 8;
    auto rows = extract_all(synth_generate(p, 9).traces, 7.0);
    TempDir dir("features");
    write_features(rows, dir.path / "f.csv");
    CHECK(read_features(dir.path / "f.csv") == rows);
    std::ifstream in(dir.path / "f.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "cell_id,cycle_index,t,soh,f01,f02,f03,f04,f05,f06,f07,f08,f09,f10,f11,f12,f13");

    std::vector<bool> mask(descriptor_count, false);
    mask[0] = mask[5] = true;
    select_descriptors(rows, mask);
    CHECK(rows[0].x.size() == 2);
    CHECK(cell_ids(rows) == std::vector<std::string>{"cell0", "cell1"});
    CHECK(rows_for(rows, {"cell1"}).size() == 8);
}
