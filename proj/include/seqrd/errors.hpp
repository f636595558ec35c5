#pragma once

#include <stdexcept>
#include <string>

namespace seqrd {

// A source description violates its own invariants (bad dimensions, variances,
// probabilities, or a non-stationary regression).
class invalid_spec_error : public std::runtime_error {
 public:
  explicit invalid_spec_error(const std::string& what) : std::runtime_error(what) {}
};

// A closed form was requested outside the distortion region where it is valid.
class out_of_region_error : public std::runtime_error {
 public:
  explicit out_of_region_error(const std::string& what) : std::runtime_error(what) {}
};

// No closed form covers this input; callers fall through to a numerical solver.
class no_closed_form_error : public std::runtime_error {
 public:
  explicit no_closed_form_error(const std::string& what) : std::runtime_error(what) {}
};

// The constraint set admits no finite-rate solution (e.g. exact-zero distortion
// targets for a continuous source).
class infeasible_error : public std::runtime_error {
 public:
  explicit infeasible_error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed configuration input.
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace seqrd
