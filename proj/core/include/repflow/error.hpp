#pragma once

#include <stdexcept>
#include <string>

namespace repflow {

// Raised for every contract violation, malformed input and I/O failure in the
// core library. The CLI maps it to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace repflow
