#pragma once

#include <stdexcept>
#include <string>

namespace ebmlab {

// Every failure raised by the library carries the name of the module that
// detected it, so the CLI can report "<module>: <what>".
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(module + ": " + what), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

}  // namespace ebmlab
