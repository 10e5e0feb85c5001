#pragma once

#include <stdexcept>
#include <string>

namespace segbench {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Two images that must share a voxel grid do not.
class GridMismatch : public Error {
public:
    using Error::Error;
};

/// Malformed file content (NRRD header, sweep.json, manifest ...).
class ParseError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// External predictor exited with a nonzero status or could not be launched.
class PredictorFailed : public Error {
public:
    using Error::Error;
};

class PredictorTimeout : public Error {
public:
    using Error::Error;
};

/// External predictor produced output on a grid other than its input grid.
class PredictorGridMismatch : public Error {
public:
    using Error::Error;
};

}  // namespace segbench
