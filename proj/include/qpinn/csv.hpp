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

#include <charconv>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "error.hpp"

namespace qpinn::csv {

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

inline bool parse(std::string_view s, double &out) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    const auto *end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc{} && ptr == end && !s.empty();
}

inline bool parse(std::string_view s, long &out) {
    s = trim(s);
    const auto *end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc{} && ptr == end && !s.empty();
}

/// Shortest decimal text that parses back to the same double.
inline std::string format(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) {
        throw Error("csv::format: conversion failed");
    }
    return std::string(buf, ptr);
}

inline std::string format(long v) { return std::to_string(v); }

/// Column positions looked up by name in a header row.
class Header {
  public:
    explicit Header(std::string_view line) {
        for (auto name : split(line)) {
            names_.emplace_back(trim(name));
        }
        if (!names_.empty() && names_.front().starts_with("\xEF\xBB\xBF")) {
            names_.front().erase(0, 3);
        }
    }

    [[nodiscard]] int find(std::string_view name) const {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (names_[i] == name) {
                return static_cast<int>(i);
            }
        }
        return -1;
    }

    /// Throws DataError naming the file when a required column is absent.
    [[nodiscard]] std::vector<int> require(const std::vector<std::string> &columns,
                                           const std::string &where) const {
        std::vector<int> out;
        for (const auto &c : columns) {
            const int idx = find(c);
            if (idx < 0) {
                throw DataError(where + ":1: missing required column '" + c + "'");
            }
            out.push_back(idx);
        }
        return out;
    }

    [[nodiscard]] std::size_t size() const noexcept { return names_.size(); }
    [[nodiscard]] const std::vector<std::string> &names() const noexcept { return names_; }

  private:
    std::vector<std::string> names_;
};

inline std::ifstream open_input(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open '" + path + "'");
    }
    return in;
}

inline std::ofstream open_output(const std::string &path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write '" + path + "'");
    }
    return out;
}

} // namespace qpinn::csv
