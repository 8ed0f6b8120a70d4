#pragma once

#include <stdexcept>
#include <string>

namespace cilab {

// Base class for all library errors. Subclasses map onto the CLI's
// distinct exit codes (see tools/cilab_main.cpp).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Shape or emptiness violations in the linear-algebra core.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Inputs too small for an estimator's denominator (b < 2, n < 4).
class DegenerateSizeError : public Error {
 public:
  using Error::Error;
};

// CKA is undefined: a centered Gram matrix is zero or a radicand is
// non-positive. Never silently mapped to 0.
class UndefinedSimilarityError : public Error {
 public:
  using Error::Error;
};

// A caller broke a protocol contract (batch size changed mid-stream,
// label outside the active set, missing prior stage, ...).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// A scalar argument is outside its valid range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment configuration (counts that do not add up, bad
// branch point, malformed config file).
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

// Persisted state does not match its recorded digest or config hash.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Zero-norm row where a cosine head needs a direction.
class NormalizationError : public Error {
 public:
  using Error::Error;
};

}  // namespace cilab
