#pragma once

#include "mabr/types.hpp"

namespace test_util {

inline bool exact(const mabr::Matrix& a, const mabr::Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

}  // namespace test_util
