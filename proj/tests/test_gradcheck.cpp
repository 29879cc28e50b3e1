#include <gtest/gtest.h>

#include "fedasmu/gradcheck.hpp"
#include "fedasmu/selftest.hpp"

using namespace fedasmu;

TEST(GradCheck, RelativeErrorFloor) {
  EXPECT_EQ(gradcheck::rel_error(1.0, 1.0, 1e-4), 0.0);
  EXPECT_DOUBLE_EQ(gradcheck::rel_error(2.0, 1.0, 1e-4), 0.5);
  EXPECT_DOUBLE_EQ(gradcheck::rel_error(1e-9, 0.0, 1e-4), 1e-5);
}

TEST(GradCheck, CentralDifferenceOfCubic) {
  const auto f = [](double x) { return x * x * x; };
  EXPECT_NEAR(gradcheck::central_difference(f, 2.0, 1e-4), 12.0, 1e-7);
}

TEST(GradCheck, AllAnalyticGradientsAgree) {
  for (const auto &r : gradcheck::run_all()) {
    EXPECT_TRUE(r.passed()) << r.name << " max rel err " << r.max_rel_error;
    EXPECT_GE(r.instances, 20u) << r.name;
  }
}

TEST(GradCheck, DetectsAWrongGradient) {
  // the same harness must flag a gradient that is off by a constant factor
  const auto f = [](double x) { return std::sin(x); };
  const double fd = gradcheck::central_difference(f, 0.7, 1e-5);
  EXPECT_GT(gradcheck::rel_error(1.01 * std::cos(0.7), fd, 1e-4), 1e-3);
}

TEST(Invariants, SuitePasses) {
  for (const auto &c : run_invariant_suite(2))
    EXPECT_TRUE(c.ok) << c.name << ": " << c.detail;
}
