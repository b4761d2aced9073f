#pragma once

#include <stdexcept>

namespace csr {

// Argument and precondition violations use std::invalid_argument; misuse of
// stateful objects (stale caches) uses std::logic_error.

/// Filesystem failure: missing file, unwritable directory, short read.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File contents that do not parse: bad magic, truncated payload.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace csr
