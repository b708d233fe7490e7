#pragma once

#include <stdexcept>
#include <string>

namespace ramer {

enum class ErrorKind {
    Config,      // invalid configuration or arguments
    Parse,       // malformed input file
    Artifact,    // missing or hash-mismatched pipeline artifact
    Degenerate,  // numerically degenerate input (e.g. zero-norm vector)
    Runtime,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void throw_error(ErrorKind k, const std::string& msg) { throw Error(k, msg); }

}  // namespace ramer
