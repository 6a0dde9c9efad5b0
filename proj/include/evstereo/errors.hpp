#pragma once
#include <stdexcept>
#include <string>

namespace evstereo {

// Violated precondition or invariant. CLI maps this to exit code 1.
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unreadable/unwritable file or malformed byte stream. CLI maps this to exit code 2.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void contract(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}

}  // namespace evstereo
