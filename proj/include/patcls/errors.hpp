#pragma once

#include <stdexcept>

namespace patcls {

// Base for all library errors. The CLI maps ConfigError to exit code 2 and
// every other Error to exit code 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error { using Error::Error; };
struct NotOnTape : Error { using Error::Error; };

struct MalformedIpc : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct MissingColumn : Error { using Error::Error; };
struct DecodeError : Error { using Error::Error; };
struct EmptyCorpus : Error { using Error::Error; };

struct InvalidConfig : Error { using Error::Error; };
struct TokenOutOfRange : Error { using Error::Error; };
struct NotEnoughLayers : Error { using Error::Error; };
struct LabelOutOfRange : Error { using Error::Error; };

struct MissingSectionData : Error { using Error::Error; };
struct EmptyTestSet : Error { using Error::Error; };

struct ConfigError : Error { using Error::Error; };

}  // namespace patcls
