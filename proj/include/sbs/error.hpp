#pragma once
#include <cstddef>
#include <stdexcept>
#include <string>

namespace sbs {

class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Violated operation precondition (bad argument, out-of-range id, ...).
class PreconditionError : public Error
{
public:
    using Error::Error;
};

class ShapeError : public Error
{
public:
    using Error::Error;
};

/// NaN/Inf encountered in activations, losses, gradients or statistics.
class NumericalError : public Error
{
public:
    using Error::Error;
};

/// Malformed binary or text input (IDX, CSV, metrics files).
class FormatError : public Error
{
public:
    using Error::Error;
};

class ConfigError : public Error
{
public:
    using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& msg)
{
    if (!cond) throw PreconditionError(msg);
}

} // namespace detail
} // namespace sbs
