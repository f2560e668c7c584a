#pragma once

#include <stdexcept>
#include <string>

namespace srkd {

// Error categories, mirrored one-to-one by the C API status codes.
enum class ErrorCode {
    param = 1,     // bad argument value (ranges, unknown enum strings)
    io = 2,        // file open/read/write failures
    format = 3,    // malformed file container (magic, truncation)
    data = 4,      // malformed payload (bad line, out-of-range id)
    shape = 5,     // tensor dimension mismatch
    contract = 6,  // caller broke an operation precondition
    numeric = 7,   // NaN/Inf where finite values are required
    config = 8,    // inconsistent run configuration
    internal = 9,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

struct ParamError : Error {
    explicit ParamError(const std::string& m) : Error(ErrorCode::param, m) {}
};
struct IoError : Error {
    explicit IoError(const std::string& m) : Error(ErrorCode::io, m) {}
};
struct FormatError : Error {
    explicit FormatError(const std::string& m) : Error(ErrorCode::format, m) {}
};
struct DataError : Error {
    explicit DataError(const std::string& m) : Error(ErrorCode::data, m) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error(ErrorCode::shape, m) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& m) : Error(ErrorCode::contract, m) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error(ErrorCode::numeric, m) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(ErrorCode::config, m) {}
};

}  // namespace srkd
