#pragma once

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <filesystem>
#include <string>

#include "reidkit/error.hpp"

#define EXPECT_ERROR_CODE(stmt, expected)                                          \
  do {                                                                             \
    try {                                                                          \
      (void)(stmt);                                                                \
      ADD_FAILURE() << "expected reidkit::Error " << reidkit::to_string(expected); \
    } catch (const reidkit::Error& e) {                                            \
      EXPECT_EQ(e.code(), expected) << e.what();                                   \
    }                                                                              \
  } while (0)

namespace testing_util {

/// ||a - b|| / max(||a|| + ||b||, 1e-12).
template <class A, class B>
double relative_error(const A& a, const B& b) {
  const double diff = (a - b).norm();
  return diff / std::max(a.norm() + b.norm(), 1e-12);
}

/// Fresh empty directory under the build tree's temp area.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("reidkit_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing_util
