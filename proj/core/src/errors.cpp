#include "mergecap/errors.hpp"

namespace mergecap {

ParseError::ParseError(std::size_t line, const std::string& what_arg)
    : Error("ParseError: line " + std::to_string(line) + ": " + what_arg), line_(line) {}

}  // namespace mergecap
