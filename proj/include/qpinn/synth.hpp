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
 * @file synth.hpp
 * Synthetic capacity-fade corpora for pipeline verification.
 *
 * Per cell: fade parameters a ~ U[a_min, a_max], b ~ U[b_min, b_max],
 * internal resistance r0 ~ U[r0_min, r0_max] ohm and ambient temperature
 * T_amb ~ U[ambient_min, ambient_max] C. At cycle k of K:
 *
 *   u_k   = 1 - a (k / K)^b                       true SOH
 *   Q_k   = Q_nom u_k                              true capacity
 *   label = Q_nom (u_k + sigma N(0, 1))            measured discharge capacity
 *   R_k   = r0 (1 + 1.5 (1 - u_k))
 *
 * Each cycle starts at state of charge s0 = 0.10 and runs
 * a constant-current charge at I = Q_nom / 2 up to s = 0.85 with
 * V = OCV(s) + I R_k (1 + 0.5 tau / t_cc) (polarization builds up over the
 * charge time t_cc), then a 1200 s constant-voltage hold at the final CC
 * voltage whose current decays as I exp(-tau / tau_cv) with
 * tau_cv = 400 (1 + 2 (1 - u_k)) s, then
 * a 600 s rest and a constant-current discharge of 0.8 Q_k at -I with
 * V = OCV(s) - I R_k. Temperature follows
 * T = T_amb + 25 I^2 R_k (1 - exp(-tau / 1200)). Optional Gaussian sensor
 * noise is added to voltage, current and temperature; it is off by default
 * so that every cycle statistic follows u_k exactly.
 *
 * OCV(s) = 3.40 + 0.65 s - 0.12 exp(-12 s) + 0.08 exp(-15 (1 - s)).
 */

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "csv.hpp"
#include "data.hpp"
#include "error.hpp"
#include "random.hpp"

namespace qpinn::data {

struct SynthParams {
    int n_cells = 20;
    int cycles = 300;
    double a_min = 0.15;
    double a_max = 0.35;
    double b_min = 0.9;
    double b_max = 1.8;
    double label_noise = 0.002;
    double nominal_capacity_ah = 2.0;
    double r0_min_ohm = 0.049;
    double r0_max_ohm = 0.051;
    double ambient_min_c = 24.8;
    double ambient_max_c = 25.2;
    int cc_samples = 40;
    int cv_samples = 20;
    int discharge_samples = 10;
    double voltage_noise_v = 0.0; ///< sensor noise std devs; zero keeps descriptors monotone in u
    double current_noise_a = 0.0;
    double temperature_noise_c = 0.0;
    std::string cell_prefix = "cell";

    void validate() const {
        if (n_cells <= 0 || cycles <= 0 || cc_samples < 2 || cv_samples < 1 ||
            discharge_samples < 2) {
            throw InvalidInput("synth: sizes must be positive");
        }
        require(a_min <= a_max && b_min <= b_max, "synth: empty fade parameter range");
        require(a_min >= 0.0 && a_max < 1.0 && b_min > 0.0, "synth: fade parameters out of range");
        require(r0_min_ohm > 0.0 && r0_min_ohm <= r0_max_ohm, "synth: invalid resistance range");
        require(ambient_min_c <= ambient_max_c, "synth: empty ambient range");
        require(label_noise >= 0.0 && nominal_capacity_ah > 0.0, "synth: invalid noise/nominal");
    }
};

struct FadeTruth {
    std::string cell_id;
    double a = 0.0;
    double b = 0.0;
    double r0_ohm = 0.0;
    double ambient_c = 0.0;
};

struct SynthCorpus {
    std::vector<CellTrace> traces;
    std::vector<FadeTruth> truth;
};

inline double fade_soh(double a, double b, long cycle, long total_cycles) {
    return 1.0 - a * std::pow(static_cast<double>(cycle) / static_cast<double>(total_cycles), b);
}

inline double open_circuit_voltage(double soc) {
    return 3.40 + 0.65 * soc - 0.12 * std::exp(-12.0 * soc) + 0.08 * std::exp(-15.0 * (1.0 - soc));
}

inline SynthCorpus synth_generate(const SynthParams &p, std::uint64_t seed) {
    p.validate();
    SynthCorpus corpus;
    const int width = static_cast<int>(std::to_string(p.n_cells - 1).size());
    for (int c = 0; c < p.n_cells; ++c) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
        FadeTruth truth;
        std::string number = std::to_string(c);
        number.insert(0, static_cast<std::size_t>(std::max(0, width - static_cast<int>(number.size()))), '0');
        truth.cell_id = p.cell_prefix + number;
        truth.a = rng.uniform(p.a_min, p.a_max);
        truth.b = rng.uniform(p.b_min, p.b_max);
        truth.r0_ohm = rng.uniform(p.r0_min_ohm, p.r0_max_ohm);
        truth.ambient_c = rng.uniform(p.ambient_min_c, p.ambient_max_c);

        CellTrace trace;
        trace.cell_id = truth.cell_id;
        trace.nominal_capacity_ah = p.nominal_capacity_ah;
        trace.chemistry = "synthetic";
        const double current = 0.5 * p.nominal_capacity_ah;

        for (long k = 0; k < p.cycles; ++k) {
            const double u = fade_soh(truth.a, truth.b, k, p.cycles);
            const double q = p.nominal_capacity_ah * u;
            const double r = truth.r0_ohm * (1.0 + 1.5 * (1.0 - u));
            const double soc0 = 0.10;
            const double soc_end = 0.85;
            const double t_cc = (soc_end - soc0) * q / current * 3600.0;
            const double tau_cv = 400.0 * (1.0 + 2.0 * (1.0 - u));
            const double t_cv = 1200.0;

            CycleRecord rec;
            rec.cell_id = trace.cell_id;
            rec.cycle_index = k;
            auto add = [&](double time, double v, double i, double temp) {
                rec.samples.push_back(Sample{time, v + p.voltage_noise_v * rng.normal(),
                                             i + p.current_noise_a * rng.normal(),
                                             temp + p.temperature_noise_c * rng.normal()});
            };
            auto heat = [&](double i, double elapsed) {
                return truth.ambient_c + 25.0 * i * i * r * (1.0 - std::exp(-elapsed / 1200.0));
            };

            for (int j = 0; j < p.cc_samples; ++j) {
                const double tau = t_cc * j / (p.cc_samples - 1);
                const double soc = soc0 + current * tau / (3600.0 * q);
                const double polarization = 1.0 + 0.5 * tau / t_cc;
                add(tau, open_circuit_voltage(soc) + current * r * polarization, current,
                    heat(current, tau));
            }
            const double v_cv = open_circuit_voltage(soc_end) + 1.5 * current * r;
            for (int j = 1; j <= p.cv_samples; ++j) {
                const double tau = t_cv * j / p.cv_samples;
                const double i = current * std::exp(-tau / tau_cv);
                add(t_cc + tau, v_cv, i, heat(i, t_cc + tau));
            }
            const double t_dis_start = t_cc + t_cv + 600.0;
            const double t_dis = 0.8 * q / current * 3600.0;
            const double soc_top = 0.95;
            for (int j = 0; j < p.discharge_samples; ++j) {
                const double tau = t_dis * j / (p.discharge_samples - 1);
                const double soc = soc_top - current * tau / (3600.0 * q);
                add(t_dis_start + tau, open_circuit_voltage(soc) - current * r, -current,
                    heat(current, tau));
            }

            rec.discharge_capacity_ah = p.nominal_capacity_ah * (u + p.label_noise * rng.normal());
            trace.cycles.push_back(std::move(rec));
        }
        corpus.traces.push_back(std::move(trace));
        corpus.truth.push_back(truth);
    }
    return corpus;
}

inline void write_fade_truth(const std::vector<FadeTruth> &truth, const std::filesystem::path &file) {
    auto out = csv::open_output(file.string());
    out << "cell_id,a,b,r0_ohm,ambient_c\n";
    for (const auto &t : truth) {
        out << t.cell_id << ',' << csv::format(t.a) << ',' << csv::format(t.b) << ','
            << csv::format(t.r0_ohm) << ',' << csv::format(t.ambient_c) << '\n';
    }
}

} // namespace qpinn::data
