#pragma once

#include <gtest/gtest.h>

#include "gradient_cases.hpp"

namespace xvmunet::testing {

inline void expect_tensor_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

}  // namespace xvmunet::testing
