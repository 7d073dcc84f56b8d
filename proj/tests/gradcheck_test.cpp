#include "clipmatrix/gradcheck.hpp"

#include <gtest/gtest.h>

namespace gc = clipmatrix::gradcheck;

TEST(Gradcheck, TinySceneEveryStagePasses) {
  const auto results = gc::run({});
  ASSERT_GE(results.size(), 10u);
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed()) << r.name << " worst=" << r.worst << " nonsmooth=" << r.nonsmooth;
    EXPECT_EQ(r.cases, 100);
    EXPECT_EQ(r.tolerance, r.linear ? 1e-4 : 1e-3) << r.name;
  }
}

TEST(Gradcheck, HumanoidSceneEveryStagePasses) {
  gc::Options opts;
  opts.scene = "humanoid";
  opts.cases = 20;
  for (const auto& r : gc::run(opts)) EXPECT_TRUE(r.passed()) << r.name << " worst=" << r.worst;
}

TEST(Gradcheck, ZeroToleranceFails) {
  gc::Options opts;
  opts.cases = 5;
  opts.tolerance = 0;
  bool any_failed = false;
  for (const auto& r : gc::run(opts)) any_failed = any_failed || !r.passed();
  EXPECT_TRUE(any_failed);
}

TEST(Gradcheck, SameSeedSameResult) {
  gc::Options opts;
  opts.cases = 10;
  const auto a = gc::run(opts), b = gc::run(opts);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].worst, b[i].worst) << a[i].name;
}

TEST(Gradcheck, UnknownSceneIsConfigError) {
  gc::Options opts;
  opts.scene = "teapot";
  EXPECT_THROW(gc::run(opts), clipmatrix::ConfigError);
}
