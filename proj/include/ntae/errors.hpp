#pragma once

#include <stdexcept>
#include <string>

namespace ntae {

// Error taxonomy shared across the library. kind() is the stable
// machine-readable tag the CLI prints on failure.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(msg), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define NTAE_DEFINE_ERROR(Name, tag)                                     \
    class Name : public Error {                                          \
    public:                                                              \
        explicit Name(const std::string& msg) : Error(tag, msg) {}       \
    };

NTAE_DEFINE_ERROR(ShapeError, "shape")
NTAE_DEFINE_ERROR(SizeError, "size")
NTAE_DEFINE_ERROR(ModeError, "mode")
NTAE_DEFINE_ERROR(PlanError, "plan")
NTAE_DEFINE_ERROR(RankError, "rank")
NTAE_DEFINE_ERROR(ConfigError, "config")
NTAE_DEFINE_ERROR(FormatError, "format")
NTAE_DEFINE_ERROR(UsageError, "usage")
NTAE_DEFINE_ERROR(InputError, "input")
NTAE_DEFINE_ERROR(DegenerateInputError, "degenerate-input")
NTAE_DEFINE_ERROR(DivergenceError, "divergence")
NTAE_DEFINE_ERROR(IoError, "io")

#undef NTAE_DEFINE_ERROR

}  // namespace ntae
