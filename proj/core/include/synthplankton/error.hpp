#pragma once

#include <stdexcept>
#include <string>

namespace synthplankton {

// All library failures surface as this type; the message carries a stable
// lowercase prefix ("no images found", "crop exceeds image", ...) that callers
// and tests match on.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace synthplankton
