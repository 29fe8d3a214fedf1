#pragma once

#include <stdexcept>
#include <string>

namespace relnas {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidGene : public Error {
public:
    InvalidGene(std::size_t position, double value, double lo, double hi);
    std::size_t position;
    double value;
    double lo;
    double hi;
};

class LengthMismatch : public Error { using Error::Error; };
class InvalidGenotype : public Error { using Error::Error; };
class SpaceTooLarge : public Error { using Error::Error; };
class OddPopulation : public Error { using Error::Error; };
class NonFiniteLoss : public Error { using Error::Error; };
class UnknownKey : public Error { using Error::Error; };
class MissingShape : public Error { using Error::Error; };
class SchemeMismatch : public Error { using Error::Error; };
class ShapeMismatch : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class HashMismatch : public Error { using Error::Error; };
class CorruptCheckpoint : public Error { using Error::Error; };

/// Evaluator failure re-raised by the search loop with the individual it hit.
class EvaluationFailed : public Error {
public:
    EvaluationFailed(int individual_id, const std::string& what);
    int individual_id;
};

} // namespace relnas
