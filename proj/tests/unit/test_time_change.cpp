#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "tcfbsde/core.hpp"
#include "tcfbsde/time_change.hpp"
#include "test_support.hpp"

using namespace tcfbsde;
using tcfbsde::testing::moments;
using tcfbsde::testing::within;

namespace {

SubordinatorPath staircase(std::vector<double> values, double step, double horizon) {
  SubordinatorPath p;
  p.grid = {step, step * static_cast<double>(values.size() - 1)};
  p.values = std::move(values);
  p.calendar_horizon = horizon;
  std::size_t i = 0;
  while (p.values[i] <= horizon) ++i;
  p.passage_index = i;
  return p;
}

// D(1) under an independent stream per path.
std::vector<double> terminal_values(const SubordinatorSpec& spec, double du, std::size_t paths) {
  std::vector<double> out(paths);
  for (std::size_t i = 0; i < paths; ++i) {
    const auto path = sample_subordinator(spec, 1e-9, {du, 1.0}, stream_seed(11, i, StreamPurpose::kSubordinator));
    out[i] = path.values[static_cast<std::size_t>(std::llround(1.0 / du))];
  }
  return out;
}

}  // namespace

TEST(LaplaceExponent, ClosedFormExamples) {
  EXPECT_DOUBLE_EQ(laplace_exponent({0.5, 1.0}, 4.0), 2.0);
  EXPECT_DOUBLE_EQ(laplace_exponent({0.9, 1.0}, 1.0), 1.0);
  EXPECT_NEAR(laplace_exponent({0.3, 2.0}, 8.0), 2.0 * std::pow(8.0, 0.3), 1e-14);
  EXPECT_NEAR(laplace_exponent({0.3, 2.0}, 8.0), 3.7321, 1e-4);
  EXPECT_THROW(laplace_exponent({0.5, 1.0}, 0.0), Error);
  EXPECT_THROW(laplace_exponent({0.5, 1.0}, -1.0), Error);
}

TEST(SubordinatorSpec, RejectsInvalidParameters) {
  EXPECT_THROW(SubordinatorSpec({0.0, 1.0}).validate(), Error);
  EXPECT_THROW(SubordinatorSpec({1.0, 1.0}).validate(), Error);
  EXPECT_THROW(SubordinatorSpec({0.5, 0.0}).validate(), Error);
  EXPECT_THROW(SubordinatorSpec({std::nan(""), 1.0}).validate(), Error);
  EXPECT_NO_THROW(SubordinatorSpec({0.5, 2.0}).validate());
  EXPECT_THROW(sample_subordinator({0.5, 1.0}, -1.0, {0.01, 1.0}, 1), Error);
}

TEST(Subordinator, PathInvariantsOverSeeds) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const double T = 0.5 + 0.1 * static_cast<double>(seed % 7);
    const auto path = sample_subordinator({0.3 + 0.01 * static_cast<double>(seed), 1.0}, T, {0.01, 0.05}, seed);
    ASSERT_EQ(path.values.front(), 0.0);
    for (std::size_t i = 1; i < path.values.size(); ++i) ASSERT_GE(path.values[i], path.values[i - 1]);
    EXPECT_GT(path.values.back(), T);
    EXPECT_GT(path.values[path.passage_index], T);
    EXPECT_LE(path.values[path.passage_index - 1], T);
    EXPECT_DOUBLE_EQ(path.passage_time(), path.grid.point(path.passage_index));
  }
}

TEST(Subordinator, DeterministicInSeed) {
  const auto a = sample_subordinator({0.7, 1.0}, 2.0, {0.01, 1.0}, 42);
  const auto b = sample_subordinator({0.7, 1.0}, 2.0, {0.01, 1.0}, 42);
  const auto c = sample_subordinator({0.7, 1.0}, 2.0, {0.01, 1.0}, 43);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, c.values);
}

TEST(Subordinator, AlignedLengthAndCoarsening) {
  const auto path = sample_subordinator_aligned({0.6, 1.0}, 1.0, {0.01, 0.33}, 5, 4);
  ASSERT_EQ((path.values.size() - 1) % 4, 0u);
  const auto coarse = coarsen(path, 4);
  for (std::size_t i = 0; i < coarse.values.size(); ++i) EXPECT_EQ(coarse.values[i], path.values[4 * i]);
  EXPECT_DOUBLE_EQ(coarse.grid.step, 0.04);
}

TEST(Subordinator, LaplaceTransformHalfStable) {
  const auto d1 = terminal_values({0.5, 1.0}, 1e-3, 10000);
  std::vector<double> e(d1.size());
  for (std::size_t i = 0; i < d1.size(); ++i) e[i] = std::exp(-4.0 * d1[i]);
  EXPECT_TRUE(within(moments(e), std::exp(-2.0)));
}

TEST(Subordinator, LaplaceTransformAlpha07) {
  const auto d1 = terminal_values({0.7, 1.0}, 1e-3, 10000);
  for (const double xi : {0.5, 1.0, 2.0}) {
    std::vector<double> e(d1.size());
    for (std::size_t i = 0; i < d1.size(); ++i) e[i] = std::exp(-xi * d1[i]);
    const auto m = moments(e);
    EXPECT_TRUE(within(m, std::exp(-std::pow(xi, 0.7)))) << "xi=" << xi << " mean " << m.mean << " se " << m.std_error;
  }
}

TEST(Subordinator, ScaleEntersLaplaceExponent) {
  const auto d1 = terminal_values({0.7, 2.0}, 1e-2, 10000);
  std::vector<double> e(d1.size());
  for (std::size_t i = 0; i < d1.size(); ++i) e[i] = std::exp(-d1[i]);
  EXPECT_TRUE(within(moments(e), std::exp(-laplace_exponent({0.7, 2.0}, 1.0))));
}

TEST(MittagLefflerOracle, StehfestInversionMatchesMomentSeries) {
  // E[E_t] has Laplace transform 1 / (s psi(s)) (renewal identity); invert numerically.
  for (const auto& [alpha, t] : std::vector<std::pair<double, double>>{{0.7, 1.0}, {0.5, 2.0}, {0.3, 0.5}}) {
    const auto transform = [alpha = alpha](double s) { return 1.0 / (s * std::pow(s, alpha)); };
    const double series = std::pow(t, alpha) / std::tgamma(1.0 + alpha);
    EXPECT_NEAR(tcfbsde::testing::stehfest(transform, t), series, 1e-5 * series) << alpha;
  }
}

TEST(Inverse, MeanMatchesMittagLefflerMoment) {
  std::vector<double> e1(10000);
  const std::vector<double> grid{0.0, 1.0};
  for (std::size_t i = 0; i < e1.size(); ++i) {
    const auto path = sample_subordinator({0.5, 1.0}, 1.0, {1e-3, 1.0}, stream_seed(3, i, StreamPurpose::kSubordinator));
    e1[i] = invert_subordinator(path, grid).values.back();
  }
  EXPECT_NEAR(1.0 / std::tgamma(1.5), 1.12838, 1e-5);
  EXPECT_TRUE(within(moments(e1), 1.0 / std::tgamma(1.5)));
}

TEST(Inverse, StaircaseFirstPassage) {
  // D(u) = u below 0.5, then a jump to 3.
  std::vector<double> v;
  for (int i = 0; i < 5; ++i) v.push_back(0.1 * i);
  for (int i = 0; i < 6; ++i) v.push_back(3.0 + 0.1 * i);
  const auto path = staircase(v, 0.1, 3.2);
  const std::vector<double> grid{0.0, 1.0, 2.9};
  const auto inv = invert_subordinator(path, grid);
  EXPECT_EQ(inv.values[0], 0.0);
  EXPECT_NEAR(inv.values[1], 0.5, 1e-15);
  EXPECT_NEAR(inv.values[2], 0.5, 1e-15);
  EXPECT_THROW(invert_subordinator(path, std::vector<double>{0.0, 10.0}), Error);
  EXPECT_THROW(invert_subordinator(path, std::vector<double>{0.5, 0.2}), Error);
}

TEST(Inverse, MonotoneFlatAndSandwiched) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto path = sample_subordinator({0.6, 1.0}, 1.0, {0.01, 1.0}, seed);
    const auto grid = uniform_calendar_grid(1.0, 501);
    const auto inv = invert_subordinator(path, grid);
    EXPECT_EQ(inv.values.front(), 0.0);
    for (std::size_t j = 1; j < grid.size(); ++j) {
      ASSERT_GE(inv.values[j], inv.values[j - 1]);
      const std::size_t i = inv.indices[j];
      ASSERT_GT(path.values[i], grid[j]);       // t < D(E(t))
      ASSERT_LE(path.values[i - 1], grid[j]);   // D(E(t) - du) <= t
      ASSERT_LE(inv.values[j], path.passage_time());
    }
    // Flatness: every calendar point inside a jump interval [D(u-), D(u)) maps to the same u.
    const auto sep = separating_calendar_grid(path);
    const auto inv_sep = invert_subordinator(path, sep);
    for (std::size_t j = 0; j < sep.size(); ++j) {
      const std::size_t i = inv_sep.indices[j];
      if (sep[j] == 0.0) continue;
      const double lo = path.values[i - 1], hi = path.values[i];
      for (const double t : {lo + 0.25 * (hi - lo), lo + 0.75 * (hi - lo)}) {
        if (t <= 0.0 || t >= hi || t > 1.0) continue;
        const double pts[] = {t};
        EXPECT_EQ(invert_subordinator(path, pts).indices[0], i);
      }
    }
    // Inverse relation on stored points.
    for (std::size_t i = 1; i + 1 < path.passage_index; ++i) {
      const double t = std::nextafter(path.values[i], 2.0);
      const double pts[] = {t};
      EXPECT_GE(invert_subordinator(path, pts).values[0], path.grid.point(i));
    }
  }
}

TEST(Inverse, CsvSchema) {
  const auto path = sample_subordinator({0.7, 1.0}, 1.0, {0.1, 1.0}, 9);
  const auto inv = invert_subordinator(path, uniform_calendar_grid(1.0, 5));
  std::ostringstream os;
  write_subordinator_csv(os, path, inv);
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "u,D,t,E");
  EXPECT_EQ(static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')),
            1 + std::max(path.values.size(), inv.values.size()));
}
