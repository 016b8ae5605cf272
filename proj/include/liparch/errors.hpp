#pragma once

#include <stdexcept>
#include <string>

namespace liparch {

// Malformed inputs: bad shapes, bad manifests, bad configs. CLI exit code 2.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem failures. CLI exit code 4.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An estimator could not produce a value (e.g. every sample excluded).
struct EstimatorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite or runaway values met during evaluation. Carries the path of the
// sub-block that produced them, e.g. "stack[3].post_ln_transformer.mlp2".
// Some callers treat this as a finding rather than a failure.
class DivergenceDiagnostic : public std::runtime_error {
 public:
  DivergenceDiagnostic(std::string block_path, const std::string& what)
      : std::runtime_error(block_path + ": " + what),
        block_path_(std::move(block_path)) {}

  const std::string& block_path() const { return block_path_; }

  DivergenceDiagnostic with_parent(const std::string& parent) const {
    std::string tail = what();
    auto colon = tail.find(": ");
    return DivergenceDiagnostic(parent + "." + block_path_,
                                colon == std::string::npos ? tail : tail.substr(colon + 2));
  }

 private:
  std::string block_path_;
};

}  // namespace liparch
