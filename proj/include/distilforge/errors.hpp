#pragma once

#include <stdexcept>

namespace distilforge {

// Error taxonomy shared by every module. The CLI maps these onto process
// exit codes (see tools/).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };       // dimension mismatch
struct DomainError : Error { using Error::Error; };      // bad numeric domain (T <= 0, non-finite, unnormalized rows)
struct IndexError : Error { using Error::Error; };       // token/class id out of range
struct ConfigError : Error { using Error::Error; };      // invalid configuration field
struct TapeError : Error { using Error::Error; };        // gradient-tape misuse
struct IngestError : Error { using Error::Error; };      // unreadable or malformed input text
struct IoError : Error { using Error::Error; };          // filesystem failure, carries path context
struct FormatError : Error { using Error::Error; };      // bad magic/version/truncated container
struct IntegrityError : Error { using Error::Error; };   // stored content hash does not match
struct StalenessError : Error { using Error::Error; };   // artifact binding (dataset/teacher id) mismatch
struct DivergenceError : Error { using Error::Error; };  // non-finite loss or exploding gradient
struct EvalError : Error { using Error::Error; };        // evaluation over unusable input

}  // namespace distilforge
