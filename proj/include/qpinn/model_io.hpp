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
 * @file model_io.hpp
 * JSON model container and SHA-256 content hashes.
 *
 * Doubles are written in shortest round-trip form, so load(save(m)) is
 * bit-exact and the hash of the serialized text identifies the parameters.
 */

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "csv.hpp"
#include "error.hpp"
#include "pinn.hpp"

namespace qpinn::io {

using pinn::Index;

using nlohmann::json;

inline constexpr int model_format_version = 1;

inline std::string sha256_hex(const std::string &bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256: digest failed");
    }
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) {
        out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return out.str();
}

inline std::string read_file(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw DataError(p.string() + ": cannot open");
    }
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline std::string file_sha256(const std::filesystem::path &p) { return sha256_hex(read_file(p)); }

inline json matrix_json(const ad::Matrix &m) {
    json data = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            data.push_back(m(i, j));
        }
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline ad::Matrix matrix_from(const json &j) {
    const auto rows = j.at("rows").get<Index>();
    const auto cols = j.at("cols").get<Index>();
    const auto &data = j.at("data");
    if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols)) {
        throw DataError("model file: matrix shape does not match its data");
    }
    ad::Matrix m(rows, cols);
    std::size_t k = 0;
    for (Index i = 0; i < rows; ++i) {
        for (Index c = 0; c < cols; ++c) {
            m(i, c) = data[k++].get<double>();
        }
    }
    return m;
}

inline json network_json(const ad::DenseNetwork &net) {
    json layers = json::array();
    for (const auto &l : net.layers()) {
        layers.push_back({{"activation", ad::to_string(l.activation)},
                          {"weights", matrix_json(l.weights)},
                          {"bias", matrix_json(l.bias)}});
    }
    return layers;
}

inline ad::DenseNetwork network_from(const json &j) {
    if (j.is_null()) {
        return {};
    }
    std::vector<ad::DenseLayer> layers;
    for (const auto &l : j) {
        layers.push_back({matrix_from(l.at("weights")), matrix_from(l.at("bias")),
                          ad::activation_from_string(l.at("activation").get<std::string>())});
    }
    return ad::DenseNetwork(std::move(layers));
}

inline json train_config_json(const pinn::TrainConfig &c) {
    return {{"epochs", c.epochs},
            {"lr", c.lr},
            {"plateau_factor", c.plateau_factor},
            {"plateau_patience", c.plateau_patience},
            {"plateau_threshold", c.plateau_threshold},
            {"weight_decay", c.weight_decay},
            {"clip_norm", c.clip_norm},
            {"alpha", c.alpha},
            {"beta", c.beta},
            {"batch_size", c.batch_size},
            {"block_length", c.block_length},
            {"seed", c.seed},
            {"fine_tune",
             {{"epochs", c.fine_tune.epochs},
              {"lr", c.fine_tune.lr},
              {"freeze_dynamics", c.fine_tune.freeze_dynamics}}}};
}

inline pinn::TrainConfig train_config_from(const json &j) {
    pinn::TrainConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.lr = j.at("lr").get<double>();
    c.plateau_factor = j.at("plateau_factor").get<double>();
    c.plateau_patience = j.at("plateau_patience").get<int>();
    c.plateau_threshold = j.at("plateau_threshold").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.clip_norm = j.at("clip_norm").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.beta = j.at("beta").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.block_length = j.at("block_length").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto &f = j.at("fine_tune");
    c.fine_tune.epochs = f.at("epochs").get<int>();
    c.fine_tune.lr = f.at("lr").get<double>();
    c.fine_tune.freeze_dynamics = f.at("freeze_dynamics").get<bool>();
    return c;
}

inline json to_json(const pinn::QpinnModel &m) {
    json j;
    j["format"] = "qpinn-model";
    j["format_version"] = model_format_version;
    j["variant"] = pinn::to_string(m.variant);
    j["source"] = m.source_tag;
    j["target"] = m.target_tag;
    j["t_scale"] = m.t_scale;
    const auto &a = m.architecture;
    j["architecture"] = {{"solution_hidden", a.solution_hidden},
                         {"dynamics_hidden", a.dynamics_hidden},
                         {"encoder_hidden", a.encoder_hidden},
                         {"encoder_output", a.encoder_output}};
    j["scaler"] = {{"min", m.scaler.min()}, {"max", m.scaler.max()}};
    if (m.embedder) {
        const auto &e = *m.embedder;
        json landmarks = json::array();
        for (const auto &s : e.landmarks().landmarks) {
            landmarks.push_back(s.angles);
        }
        j["embedder"] = {{"n_qubits", e.spec().n_qubits},
                         {"depth", e.spec().depth},
                         {"ring_entanglement", e.spec().ring_entanglement},
                         {"landmark_ids", e.landmarks().ids},
                         {"landmarks", std::move(landmarks)},
                         {"selection_seed", e.landmarks().selection_seed},
                         {"selection_method", nystrom::to_string(e.landmarks().selection_method)},
                         {"whitening", matrix_json(e.whitening().matrix)},
                         {"eigen_floor", e.whitening().eigen_floor},
                         {"effective_rank", e.whitening().effective_rank}};
    } else {
        j["embedder"] = nullptr;
    }
    j["networks"] = {{"solution", network_json(m.solution)},
                     {"dynamics", network_json(m.dynamics)},
                     {"encoder", m.encoder.empty() ? json(nullptr) : network_json(m.encoder)}};
    j["config"] = train_config_json(m.config);
    return j;
}

inline pinn::QpinnModel from_json(const json &j) {
    try {
        if (j.at("format").get<std::string>() != "qpinn-model") {
            throw DataError("model file: not a qpinn model");
        }
        const int version = j.at("format_version").get<int>();
        if (version != model_format_version) {
            throw DataError("model file: unsupported format_version " + std::to_string(version));
        }
        pinn::QpinnModel m;
        m.format_version = version;
        m.variant = pinn::variant_from_string(j.at("variant").get<std::string>());
        m.source_tag = j.at("source").get<std::string>();
        m.target_tag = j.at("target").get<std::string>();
        m.t_scale = j.at("t_scale").get<double>();
        const auto &a = j.at("architecture");
        m.architecture.solution_hidden = a.at("solution_hidden").get<std::vector<Index>>();
        m.architecture.dynamics_hidden = a.at("dynamics_hidden").get<std::vector<Index>>();
        m.architecture.encoder_hidden = a.at("encoder_hidden").get<std::vector<Index>>();
        m.architecture.encoder_output = a.at("encoder_output").get<Index>();
        m.scaler = quantum::MinMaxScaler(j.at("scaler").at("min").get<std::vector<double>>(),
                                         j.at("scaler").at("max").get<std::vector<double>>());
        const auto &e = j.at("embedder");
        if (!e.is_null()) {
            quantum::FeatureMapSpec spec;
            spec.n_qubits = e.at("n_qubits").get<int>();
            spec.depth = e.at("depth").get<int>();
            spec.ring_entanglement = e.at("ring_entanglement").get<bool>();
            nystrom::LandmarkSet set;
            set.ids = e.at("landmark_ids").get<std::vector<std::string>>();
            for (const auto &l : e.at("landmarks")) {
                set.landmarks.push_back({l.get<std::vector<double>>()});
            }
            set.selection_seed = e.at("selection_seed").get<std::uint64_t>();
            set.selection_method =
                nystrom::landmark_method_from_string(e.at("selection_method").get<std::string>());
            nystrom::WhiteningMatrix w{matrix_from(e.at("whitening")),
                                       e.at("eigen_floor").get<double>(),
                                       e.at("effective_rank").get<int>()};
            m.embedder = nystrom::NystromEmbedder(spec, std::move(set), std::move(w));
        }
        const auto &n = j.at("networks");
        m.solution = network_from(n.at("solution"));
        m.dynamics = network_from(n.at("dynamics"));
        m.encoder = network_from(n.at("encoder"));
        m.config = train_config_from(j.at("config"));
        m.validate();
        return m;
    } catch (const json::exception &e) {
        throw DataError(std::string("model file: ") + e.what());
    } catch (const InvalidInput &e) {
        throw DataError(std::string("model file: ") + e.what());
    }
}

inline std::string serialize(const pinn::QpinnModel &m) { return to_json(m).dump(1) + "\n"; }

/// SHA-256 of the serialized model text.
inline std::string content_hash(const pinn::QpinnModel &m) { return sha256_hex(serialize(m)); }

inline void save_model(const pinn::QpinnModel &m, const std::filesystem::path &file) {
    auto out = csv::open_output(file.string());
    out << serialize(m);
    if (!out) {
        throw Error(file.string() + ": write failed");
    }
}

inline pinn::QpinnModel load_model(const std::filesystem::path &file) {
    if (!std::filesystem::exists(file)) {
        throw DataError(file.string() + ": model file not found");
    }
    json j;
    try {
        j = json::parse(read_file(file));
    } catch (const json::exception &e) {
        throw DataError(file.string() + ": " + e.what());
    }
    return from_json(j);
}

} // namespace qpinn::io
