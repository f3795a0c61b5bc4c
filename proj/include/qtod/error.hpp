// Copyright 2026 The qtod Authors.
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

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace qtod {

// Process exit codes used by the command line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitTransport = 2;
inline constexpr int kExitInternal = 3;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return kExitInternal; }
};

/// Input data violates a schema or a domain invariant.
class ValidationError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return kExitValidation; }
};

/// Malformed input file. Messages name the offending record index and field.
class ParseError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Inconsistent or incomplete configuration (e.g. dense index without an embedding provider).
class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// A request cannot be satisfied from the available material.
class CapacityError : public ValidationError {
public:
    CapacityError(const std::string& what, std::size_t shortfall)
        : ValidationError(what), shortfall_(shortfall) {}
    std::size_t shortfall() const noexcept { return shortfall_; }

private:
    std::size_t shortfall_;
};

/// A caller broke a documented precondition.
class ContractViolation : public Error {
public:
    using Error::Error;
};

enum class Stage { none, query, retrieve, rerank, response };

inline std::string_view to_string(Stage stage) {
    switch (stage) {
        case Stage::query: return "query";
        case Stage::retrieve: return "retrieve";
        case Stage::rerank: return "rerank";
        case Stage::response: return "response";
        case Stage::none: break;
    }
    return "none";
}

enum class BackendErrorKind {
    timeout,    // no answer within the configured deadline
    transport,  // connection refused, reset, DNS, ...
    server,     // the server answered with an error status
    protocol,   // the server answered 200 with a body we cannot use
    missing     // a scripted backend has no entry for the request
};

inline std::string_view to_string(BackendErrorKind kind) {
    switch (kind) {
        case BackendErrorKind::timeout: return "timeout";
        case BackendErrorKind::transport: return "transport";
        case BackendErrorKind::server: return "server";
        case BackendErrorKind::protocol: return "protocol";
        case BackendErrorKind::missing: return "missing";
    }
    return "unknown";
}

class BackendError : public Error {
public:
    BackendError(BackendErrorKind kind, const std::string& detail, Stage stage = Stage::none)
        : Error(compose(kind, detail, stage)), kind_(kind), stage_(stage), detail_(detail) {}

    BackendErrorKind kind() const noexcept { return kind_; }
    Stage stage() const noexcept { return stage_; }
    const std::string& detail() const noexcept { return detail_; }
    int exit_code() const noexcept override { return kExitTransport; }

    BackendError at_stage(Stage stage) const { return BackendError(kind_, detail_, stage); }

private:
    static std::string compose(BackendErrorKind kind, const std::string& detail, Stage stage) {
        std::string out;
        if (stage != Stage::none) {
            out += "[stage=";
            out += to_string(stage);
            out += "] ";
        }
        out += to_string(kind);
        out += " error: ";
        out += detail;
        return out;
    }

    BackendErrorKind kind_;
    Stage stage_;
    std::string detail_;
};

}  // namespace qtod
