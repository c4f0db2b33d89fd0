#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace prpl {

enum class ErrorKind {
  kInvalidArgument,
  kMalformedHeader,
  kDimensionMismatch,
  kNonFiniteValue,
  kLabelOutOfRange,
  kIndexOutOfRange,
  kExtractorMismatch,
  kEmptyManifest,
  kDegenerateMean,
  kDegenerateData,
  kNoSharedClasses,
  kNonFiniteGradient,
  kIncompleteReport,
  kInvalidConfig,
  kIo,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kMalformedHeader: return "MalformedHeader";
    case ErrorKind::kDimensionMismatch: return "DimensionMismatch";
    case ErrorKind::kNonFiniteValue: return "NonFiniteValue";
    case ErrorKind::kLabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::kExtractorMismatch: return "ExtractorMismatch";
    case ErrorKind::kEmptyManifest: return "EmptyManifest";
    case ErrorKind::kDegenerateMean: return "DegenerateMean";
    case ErrorKind::kDegenerateData: return "DegenerateData";
    case ErrorKind::kNoSharedClasses: return "NoSharedClasses";
    case ErrorKind::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::kIncompleteReport: return "IncompleteReport";
    case ErrorKind::kInvalidConfig: return "InvalidConfig";
    case ErrorKind::kIo: return "Io";
  }
  return "Unknown";
}

// All library failures are reported through this type; kind() is stable,
// what() carries the human-readable context.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Same kind, message prefixed with extra context ("extractor 'x': ...").
  Error with_context(const std::string& context) const {
    Error e(*this);
    e.context_ = context + ": " + std::runtime_error::what();
    return e;
  }

  const char* what() const noexcept override {
    return context_.empty() ? std::runtime_error::what() : context_.c_str();
  }

 private:
  ErrorKind kind_;
  std::string context_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace prpl
