// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace locas {

// Base of every error raised by the library. category() is the stable
// name printed by the CLI on failure.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}
    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

#define LOCAS_DEFINE_ERROR(Name)                                               \
    class Name : public Error {                                                \
    public:                                                                    \
        explicit Name(const std::string& what) : Error(#Name, what) {}         \
    };

LOCAS_DEFINE_ERROR(NumericalError)
LOCAS_DEFINE_ERROR(ShapeError)
LOCAS_DEFINE_ERROR(DegenerateGradient)
LOCAS_DEFINE_ERROR(DegenerateActivation)
LOCAS_DEFINE_ERROR(CapacityError)
LOCAS_DEFINE_ERROR(FormatError)
LOCAS_DEFINE_ERROR(ConfigError)

#undef LOCAS_DEFINE_ERROR

}  // namespace locas
