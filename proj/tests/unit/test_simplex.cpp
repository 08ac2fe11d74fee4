#include "mpcjoin/simplex.hpp"

#include <gtest/gtest.h>

using namespace mpcjoin;

TEST(Simplex, SingleVariable) {
  LinearProgram lp;
  lp.num_vars = 1;
  lp.objective = {1};
  lp.add({1}, Sense::LessEq, 1);
  auto s = lp_solve_exact(lp);
  ASSERT_EQ(s.status, LpStatus::Optimal);
  EXPECT_EQ(s.value, 1);
  EXPECT_EQ(s.x[0], 1);
}

TEST(Simplex, TrianglePacking) {
  LinearProgram lp;
  lp.num_vars = 3;
  lp.objective = {1, 1, 1};
  lp.add({1, 0, 1}, Sense::LessEq, 1);
  lp.add({1, 1, 0}, Sense::LessEq, 1);
  lp.add({0, 1, 1}, Sense::LessEq, 1);
  auto s = lp_solve_exact(lp);
  ASSERT_EQ(s.status, LpStatus::Optimal);
  EXPECT_EQ(s.value, Rational(3, 2));
  for (const auto& x : s.x) EXPECT_EQ(x, Rational(1, 2));
}

TEST(Simplex, LexicographicTieBreak) {
  // maximize x + y s.t. x + y <= 1: every point on the segment is optimal.
  LinearProgram lp;
  lp.num_vars = 2;
  lp.objective = {1, 1};
  lp.add({1, 1}, Sense::LessEq, 1);
  auto s = lp_solve_exact(lp);
  EXPECT_EQ(s.x, (std::vector<Rational>{0, 1}));
}

TEST(Simplex, InfeasibleAndUnbounded) {
  LinearProgram inf;
  inf.num_vars = 1;
  inf.objective = {1};
  inf.add({1}, Sense::LessEq, 1);
  inf.add({1}, Sense::GreaterEq, 2);
  EXPECT_EQ(lp_solve_exact(inf).status, LpStatus::Infeasible);

  LinearProgram unb;
  unb.num_vars = 2;
  unb.objective = {1, 0};
  unb.add({1, -1}, Sense::LessEq, 1);
  EXPECT_EQ(lp_solve_exact(unb).status, LpStatus::Unbounded);
}

TEST(Simplex, EqualityAndMinimize) {
  LinearProgram lp;
  lp.num_vars = 2;
  lp.maximize = false;
  lp.objective = {2, 3};
  lp.add({1, 1}, Sense::Equal, 4);
  lp.add({1, 0}, Sense::LessEq, 3);
  auto s = lp_solve_exact(lp);
  ASSERT_EQ(s.status, LpStatus::Optimal);
  EXPECT_EQ(s.value, 9);
  EXPECT_EQ(s.x, (std::vector<Rational>{3, 1}));
}

TEST(Simplex, RedundantEqualities) {
  LinearProgram lp;
  lp.num_vars = 2;
  lp.objective = {1, 2};
  lp.add({1, 1}, Sense::Equal, 2);
  lp.add({2, 2}, Sense::Equal, 4);
  lp.add({-1, 0}, Sense::LessEq, -1);  // x >= 1 with negative rhs
  auto s = lp_solve_exact(lp);
  ASSERT_EQ(s.status, LpStatus::Optimal);
  EXPECT_EQ(s.x, (std::vector<Rational>{1, 1}));
}

TEST(Rational, Helpers) {
  EXPECT_EQ(to_string(Rational(3, 6)), "1/2");
  EXPECT_EQ(to_string(Rational(4)), "4");
  EXPECT_EQ(parse_rational("6/4"), Rational(3, 2));
  EXPECT_EQ(floor_of(Rational(-1, 2)), -1);
  EXPECT_EQ(ceil_of(Rational(1, 2)), 1);
  EXPECT_EQ(floor_power(64, Rational(2, 3)), 16u);
  EXPECT_EQ(floor_power(10, Rational(1, 2)), 3u);
  EXPECT_EQ(floor_power(27, Rational(1, 3)), 3u);
  EXPECT_EQ(approximate(0.5, 100), Rational(1, 2));
  EXPECT_EQ(approximate(1.0 / 3.0, 1000), Rational(1, 3));
}
