#pragma once

#include <doctest.h>

#include "oracles.hpp"
#include "stam/error.hpp"

namespace stam::testing {

// Runs `fn` and returns the code it throws; fails the test when nothing is thrown.
inline Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::InvalidArgument;
}

}  // namespace stam::testing
