#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "compactnet/errors.hpp"
#include "compactnet/search.hpp"

namespace compactnet {
namespace {

SearchConfig config(double t_final, int n, double d) {
  SearchConfig cfg;
  cfg.t_final = t_final;
  cfg.n_iterations = n;
  cfg.decay = d;
  return cfg;
}

TEST(Schedule, LiteralSumForPublishedRow) {
  const auto raw = raw_subtargets(2.5, 30, 0.98);
  ASSERT_EQ(raw.size(), 30u);
  // Direct summation, term by term with std::pow.
  double sum = 0.0;
  for (int i = 0; i < 30; ++i) sum += 2.5 / 30 * std::pow(0.98, i);
  double got = 0.0;
  for (double v : raw) got += v;
  EXPECT_NEAR(got, sum, 1e-12);
  EXPECT_NEAR(got, 1.894, 5e-4);
}

TEST(Schedule, InitialTargetForCpuRow) {
  EXPECT_NEAR(invert_initial_target(1.8, 30, 0.98), 2.376, 5e-4);
  EXPECT_EQ(invert_initial_target(1.5, 7, 1.0), 1.5);
  EXPECT_THROW(invert_initial_target(1.5, 0, 0.9), ConfigError);
  EXPECT_THROW(invert_initial_target(1.5, 3, 0.0), ConfigError);
}

TEST(Schedule, UniformSplitWhenNoDecay) {
  const auto s = schedule(config(1.5, 3, 1.0), 600.0);
  ASSERT_EQ(s.increments.size(), 3u);
  for (double inc : s.increments) EXPECT_NEAR(inc, 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(s.cumulative_factors[0], 7.0 / 6.0, 1e-15);
  EXPECT_NEAR(s.cumulative_factors[1], 8.0 / 6.0, 1e-15);
  EXPECT_EQ(s.cumulative_factors[2], 1.5);
  EXPECT_EQ(s.latency_budgets[2], 400.0);
  EXPECT_EQ(s.t_init, 1.5);
}

TEST(Schedule, RandomTriplesProperties) {
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> tf(1.0, 3.0), dd(0.5, 1.0);
  std::uniform_int_distribution<int> nn(1, 100);
  for (int trial = 0; trial < 1000; ++trial) {
    double t = tf(gen);
    if (t == 1.0) t = 1.5;
    const int n = nn(gen);
    const double d = trial % 10 == 0 ? 1.0 : dd(gen);
    const auto s = schedule(config(t, n, d), 1000.0);
    EXPECT_LE(std::abs(s.cumulative_factors.back() - t) / t, 1e-9);
    for (int i = 1; i < n; ++i) {
      EXPECT_EQ(s.increments[static_cast<size_t>(i)],
                s.increments[static_cast<size_t>(i - 1)] * d);
      EXPECT_GE(s.cumulative_factors[static_cast<size_t>(i)],
                s.cumulative_factors[static_cast<size_t>(i - 1)]);
      EXPECT_LE(s.latency_budgets[static_cast<size_t>(i)],
                s.latency_budgets[static_cast<size_t>(i - 1)]);
    }
    double raw_sum = 0.0;
    for (double v : s.raw_subtargets) raw_sum += v;
    EXPECT_LE(std::abs(raw_sum - t) / t, 1e-12);
    EXPECT_LE(std::abs(raw_sum - t) / t, 1e-12);
  }
}

TEST(Schedule, RejectsBadConfig) {
  EXPECT_THROW(schedule(config(1.0, 3, 0.9), 10.0), ConfigError);
  EXPECT_THROW(schedule(config(1.5, 0, 0.9), 10.0), ConfigError);
  EXPECT_THROW(schedule(config(1.5, 3, 1.1), 10.0), ConfigError);
  EXPECT_THROW(schedule(config(1.5, 3, 0.9), 0.0), ConfigError);
}

TEST(Schedule, JsonRoundTrip) {
  const auto s = schedule(config(1.8, 30, 0.98), 1234.5);
  const auto back = target_schedule_from_json(nlohmann::json::parse(to_json(s).dump()));
  EXPECT_EQ(back, s);
}

}  // namespace
}  // namespace compactnet
