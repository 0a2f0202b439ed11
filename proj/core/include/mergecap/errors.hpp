#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mergecap {

// Base for every error raised by the library. Each subclass names one failure
// mode so callers (and tests) can catch precisely what they expect.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MERGECAP_DECLARE_ERROR(Name)            \
  class Name : public Error {                   \
   public:                                      \
    explicit Name(const std::string& what_arg)  \
        : Error(#Name ": " + what_arg) {}       \
  }

// text
MERGECAP_DECLARE_ERROR(EmptyCaption);
MERGECAP_DECLARE_ERROR(CorpusEmpty);
MERGECAP_DECLARE_ERROR(UnknownId);

// numerics
MERGECAP_DECLARE_ERROR(IndexError);
MERGECAP_DECLARE_ERROR(SequenceTooShort);
MERGECAP_DECLARE_ERROR(EmptyInput);
MERGECAP_DECLARE_ERROR(ShapeError);
MERGECAP_DECLARE_ERROR(NumericError);

// model / training
MERGECAP_DECLARE_ERROR(EmptyBatch);
MERGECAP_DECLARE_ERROR(EmptySplit);
MERGECAP_DECLARE_ERROR(ConfigError);

// decoding
MERGECAP_DECLARE_ERROR(TooLarge);

// metrics
MERGECAP_DECLARE_ERROR(EmptyCorpus);

// files
MERGECAP_DECLARE_ERROR(IoError);
MERGECAP_DECLARE_ERROR(FormatError);
MERGECAP_DECLARE_ERROR(TruncatedFile);
MERGECAP_DECLARE_ERROR(DuplicateId);
MERGECAP_DECLARE_ERROR(SplitError);
MERGECAP_DECLARE_ERROR(VersionMismatch);
MERGECAP_DECLARE_ERROR(ShapeMismatch);
MERGECAP_DECLARE_ERROR(VocabMismatch);

#undef MERGECAP_DECLARE_ERROR

// Malformed caption line; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what_arg);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace mergecap
