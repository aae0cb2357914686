#pragma once

#include <stdexcept>
#include <string>

namespace seic {

// Exit-code categories used by the CLI: 2 = config/precondition,
// 3 = I/O, 4 = numeric failure.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};
struct PreconditionError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};

struct ZeroRowError : NumericError {
    using NumericError::NumericError;
};
struct FormatError : IoError {
    using IoError::IoError;
};
struct DimMismatchError : IoError {
    using IoError::IoError;
};
struct EncoderError : PreconditionError {
    using PreconditionError::PreconditionError;
};
struct DegenerateDataError : PreconditionError {
    using PreconditionError::PreconditionError;
};
struct ShapeError : PreconditionError {
    using PreconditionError::PreconditionError;
};
struct NonFiniteLossError : NumericError {
    using NumericError::NumericError;
};
struct LabelRangeError : PreconditionError {
    using PreconditionError::PreconditionError;
};
struct DegenerateColumnError : NumericError {
    using NumericError::NumericError;
};

}  // namespace seic
