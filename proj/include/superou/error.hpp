#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace superou {

/// Input outside the mathematical domain of an operation (e.g. Re z < 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An iterative or adaptive numerical procedure failed to converge.
class NumericalDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A hypothesis an experiment relies on (e.g. alpha beta~ > kappa_f b) does not hold.
class HypothesisViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Too few non-extinct replicates to form the conditioned statistic.
class InsufficientSurvivors : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation applied to an extinct (zero-mass) configuration.
class ExtinctError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-fatal numerical warnings collected by callers that care about them.
struct Diagnostics {
  std::vector<std::string> warnings;

  void warn(std::string msg) { warnings.push_back(std::move(msg)); }
  bool empty() const { return warnings.empty(); }
};

inline void warn_if(Diagnostics* diag, bool cond, const std::string& msg) {
  if (diag != nullptr && cond) diag->warn(msg);
}

}  // namespace superou
