#pragma once

#include <functional>
#include <string>

#include "cwb/error.hpp"

// Runs `f` and returns the code of the cwb::Error it throws, or "" when it
// returns normally.
inline std::string code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const cwb::Error& e) {
    return e.code();
  }
  return "";
}
