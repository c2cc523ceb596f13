#pragma once

#include <stdexcept>
#include <string>

namespace daf {

// Error categories used across the library. All derive from std::runtime_error
// so callers can catch daf errors broadly or by kind.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
};

struct ParamError : Error {
    explicit ParamError(const std::string& msg) : Error("parameter error: " + msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

struct SchemaError : Error {
    explicit SchemaError(const std::string& msg) : Error("schema error: " + msg) {}
};

struct TrainError : Error {
    explicit TrainError(const std::string& msg) : Error("training error: " + msg) {}
};

struct MetricError : Error {
    explicit MetricError(const std::string& msg) : Error("undefined metric: " + msg) {}
};

// A training sample whose mask leaves a stage without any normal position
// cannot form the distillation objectives; callers skip such samples.
struct DegenerateBatchError : TrainError {
    explicit DegenerateBatchError(const std::string& msg) : TrainError(msg) {}
};

}  // namespace daf
