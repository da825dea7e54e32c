#pragma once

#include <stdexcept>
#include <string>

namespace geoforge {

// Root of every structured error thrown by the library. Each module derives
// its own type carrying a Kind enum so callers can branch without parsing
// message text.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename KindT>
class KindedError : public Error {
 public:
  KindedError(KindT kind, const std::string& message) : Error(message), kind_(kind) {}
  KindT kind() const noexcept { return kind_; }

 private:
  KindT kind_;
};

}  // namespace geoforge
