#pragma once

#include <stdexcept>
#include <string>

namespace noisyood {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bundle/manifest/shape problems and violated preconditions on inputs.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, non-convergence, degenerate fits.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A detector asked for an input (model, ood_val, layer activations) that the
// fit context does not provide.
class MissingInputError : public Error {
 public:
  using Error::Error;
};

}  // namespace noisyood
