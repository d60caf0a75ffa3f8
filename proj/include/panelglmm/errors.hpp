#pragma once

#include <stdexcept>
#include <string>

namespace panelglmm {

/// Bad input, shape or configuration. The CLI maps these to exit code 1.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Failure during estimation (non-PD systems, degenerate moments, ...).
/// The CLI maps these to exit code 2.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidLayoutError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ShapeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class StationarityError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class StandardisationError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ScenarioRejectedError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class UnbalancedPanelError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class CsvError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DegenerateMeanError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DegenerateMomentError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class SingularSystemError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DegenerateGcvError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DegenerateComponentError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class ComponentFailureError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace panelglmm
