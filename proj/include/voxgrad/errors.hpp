#pragma once

#include <stdexcept>
#include <string>

namespace voxgrad {

// Bad arguments, shape mismatches, unusable configuration.
class ConfigError : public std::invalid_argument {
  public:
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed input files: OFF meshes, PLY, manifests, checkpoints.
class ParseError : public std::runtime_error {
  public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or divergence where finite numbers are required.
class NumericError : public std::runtime_error {
  public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace voxgrad
