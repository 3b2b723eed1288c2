#pragma once

#include <stdexcept>
#include <string>

namespace mender {

// Dimension mismatch between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration value (odd model width, unknown core, token cap).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class EmptyPromptError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Loss evaluated without any positive pair.
class SupervisionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Frames handed to the tracker out of order.
class SequencingError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Metric with a zero denominator (no ground truth, no predictions).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Annotation or track document that violates its schema. `path` names the
// offending location, e.g. "annotations[3].bbox".
class SchemaError : public std::runtime_error {
 public:
  SchemaError(std::string path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Dangling id reference inside an annotation document.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A prompt scenario whose source fields are absent from the document.
class ScenarioUnavailableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mender
