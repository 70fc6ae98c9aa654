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

#include <stdexcept>
#include <string>
#include <vector>

namespace qpinn {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A caller supplied arguments that violate an operation's preconditions.
class InvalidInput : public Error {
  public:
    using Error::Error;
};

/// An input file or record could not be accepted.
class DataError : public Error {
  public:
    using Error::Error;
};

/// A computation produced non-finite values or failed to converge.
class NumericalFault : public Error {
  public:
    using Error::Error;
};

/// Collects non-fatal warnings raised while processing data.
struct Diagnostics {
    std::vector<std::string> warnings;

    void warn(std::string message) { warnings.push_back(std::move(message)); }
    [[nodiscard]] std::size_t count() const noexcept { return warnings.size(); }
};

inline void require(bool condition, const std::string &message) {
    if (!condition) {
        throw InvalidInput(message);
    }
}

} // namespace qpinn
