// Copyright 2026 The xmodlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef XMODLAB_ERROR_HPP_
#define XMODLAB_ERROR_HPP_

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace xmodlab {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Integer ids outside their valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf surfaced by an op or a training step.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Misuse of the computation record (backward twice, non-scalar loss...).
class GraphError : public Error {
 public:
  using Error::Error;
};

// Unknown or duplicate languages, vocabularies, heads.
class RegistryError : public Error {
 public:
  using Error::Error;
};

// Configuration values that violate an invariant.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Checkpoint and data file problems.
class IoError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public IoError {
 public:
  ChecksumError(const std::string& entry, const std::string& what)
      : IoError(what), entry_(entry) {}
  const std::string& entry() const { return entry_; }

 private:
  std::string entry_;
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace xmodlab

#endif  // XMODLAB_ERROR_HPP_
