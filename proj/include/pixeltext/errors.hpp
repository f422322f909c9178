#pragma once

#include <stdexcept>
#include <string>

namespace pixeltext {

// Error hierarchy shared by all modules. Everything user-facing derives from
// Error so the CLI can catch one type and print a one-line diagnostic.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class RenderOverflow : public Error {
public:
    explicit RenderOverflow(const std::string& msg) : Error(msg) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

class CorruptShard : public Error {
public:
    explicit CorruptShard(const std::string& msg) : Error(msg) {}
};

class EmptyCorpus : public Error {
public:
    explicit EmptyCorpus(const std::string& msg) : Error(msg) {}
};

class UnknownId : public Error {
public:
    explicit UnknownId(const std::string& msg) : Error(msg) {}
};

class OddHeadDim : public Error {
public:
    explicit OddHeadDim(const std::string& msg) : Error(msg) {}
};

class NonFiniteGradient : public Error {
public:
    explicit NonFiniteGradient(const std::string& msg) : Error(msg) {}
};

class MissingModality : public Error {
public:
    explicit MissingModality(const std::string& msg) : Error(msg) {}
};

class LengthError : public Error {
public:
    explicit LengthError(const std::string& msg) : Error(msg) {}
};

class ConfigMismatch : public Error {
public:
    explicit ConfigMismatch(const std::string& msg) : Error(msg) {}
};

class EmptySequence : public Error {
public:
    explicit EmptySequence(const std::string& msg) : Error(msg) {}
};

class LengthMismatch : public Error {
public:
    explicit LengthMismatch(const std::string& msg) : Error(msg) {}
};

class AllZeroRatio : public Error {
public:
    explicit AllZeroRatio(const std::string& msg) : Error(msg) {}
};

class DegenerateInput : public Error {
public:
    explicit DegenerateInput(const std::string& msg) : Error(msg) {}
};

} // namespace pixeltext
