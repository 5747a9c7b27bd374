#pragma once

#include <stdexcept>
#include <string>

namespace pcadv {

// Bad arguments or malformed user input. The CLI maps this to exit code 1.
class InvalidInput : public std::runtime_error {
 public:
  explicit InvalidInput(const std::string& msg) : std::runtime_error(msg) {}
};

// A configuration that cannot be acted on (e.g. adversarial stage without a
// victim). Also exit code 1.
class InvalidConfig : public InvalidInput {
 public:
  explicit InvalidConfig(const std::string& msg) : InvalidInput(msg) {}
};

// A failure while running (non-finite loss, I/O failure mid-run). Exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  explicit RuntimeFailure(const std::string& msg) : std::runtime_error(msg) {}
};

// Thread-count control for the OpenMP kernels. 0 = leave the OpenMP default.
// Every parallel kernel assigns each output element to exactly one thread and
// keeps a fixed per-element arithmetic order, so results are bit-identical
// for any thread count.
void set_num_threads(int n);
int num_threads();

}  // namespace pcadv
