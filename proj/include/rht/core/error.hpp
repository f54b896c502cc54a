#pragma once

#include <stdexcept>
#include <string>

namespace rht {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller-supplied value violates an operation's precondition.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Two grids or weight tensors disagree on their dimensions.
class ShapeError : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

/// A serialized file does not follow its declared layout.
class FormatError : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

/// Filesystem failure (missing file, short write).
class IoError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message)
{
    if (!condition)
        throw InvalidArgument(message);
}

inline void require_shape(bool condition, const std::string& message)
{
    if (!condition)
        throw ShapeError(message);
}

} // namespace detail
} // namespace rht
