#pragma once

#include <stdexcept>
#include <string>

namespace posefuse {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied value violates an operation's precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Tensor, layer or mask dimensions disagree with what was declared.
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

/// A manifest or index document could not be parsed or is incomplete.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A blob referenced by a manifest is absent on disk.
class MissingLayer : public Error {
 public:
  explicit MissingLayer(std::string layer)
      : Error("missing layer file for '" + layer + "'"), layer_(std::move(layer)) {}
  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
};

class VersionMismatch : public Error {
 public:
  using Error::Error;
};

/// A gallery or checkpoint was produced by a different model than the one in use.
class FingerprintMismatch : public Error {
 public:
  using Error::Error;
};

/// The diffusion backbone adapter has no loaded backbone.
class BackboneUnavailable : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared during a numerical procedure.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

/// Filesystem read/write failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace posefuse
