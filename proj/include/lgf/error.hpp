#pragma once

#include <stdexcept>
#include <string>

namespace lgf {

// Error categories map onto the CLI exit-code contract (2 usage, 3 data/IO,
// 4 numerical failure).

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad argument, precondition or shape violation.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// File missing, unreadable, truncated or malformed.
class IoError : public Error {
public:
    using Error::Error;
};

/// Non-convergence, rank deficiency or non-finite values.
class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace lgf
