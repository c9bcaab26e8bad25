#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace artifit {

// Base class for all library failures. category() is a stable machine-readable
// tag; the CLI prints it as part of its error prefix and maps it to exit codes.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(message), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

#define ARTIFIT_DEFINE_ERROR(NAME, TAG)                                      \
    class NAME : public Error {                                              \
    public:                                                                  \
        explicit NAME(const std::string& message) : Error(TAG, message) {}   \
    }

ARTIFIT_DEFINE_ERROR(InvalidRotationError, "invalid-rotation");
ARTIFIT_DEFINE_ERROR(JointLimitError, "joint-limit");
ARTIFIT_DEFINE_ERROR(ShapeError, "shape");
ARTIFIT_DEFINE_ERROR(EmptyInputError, "empty-input");
ARTIFIT_DEFINE_ERROR(TopologyError, "topology");
ARTIFIT_DEFINE_ERROR(ParameterError, "parameter");
ARTIFIT_DEFINE_ERROR(ParseError, "parse");
ARTIFIT_DEFINE_ERROR(FormatError, "format");
ARTIFIT_DEFINE_ERROR(DegenerateGeometryError, "degenerate-geometry");
ARTIFIT_DEFINE_ERROR(UndefinedCorrelationError, "undefined-correlation");
ARTIFIT_DEFINE_ERROR(NonConvergenceError, "non-convergence");

#undef ARTIFIT_DEFINE_ERROR

} // namespace artifit
