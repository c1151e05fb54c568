#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "igssm/random.hpp"

namespace {

using igssm::make_stream;
using igssm::NormalSource;

TEST(SplitMix, MatchesPublishedFirstOutput) {
  // SplitMix64 seeded with 0 yields 0xE220A8397B1DCDAF as its first value.
  EXPECT_EQ(igssm::detail::splitmix64(0), 0xE220A8397B1DCDAFULL);
}

TEST(Streams, SameKeyGivesSameSequence) {
  auto a = make_stream(42, 7);
  auto b = make_stream(42, 7);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
}

TEST(Streams, DistinctKeysGiveDistinctSequences) {
  auto base = make_stream(42, 0);
  const auto first = base();
  EXPECT_NE(make_stream(42, 1)(), first);
  EXPECT_NE(make_stream(43, 0)(), first);
}

TEST(Streams, NormalMomentsAreStandard) {
  NormalSource src(make_stream(1, 0));
  const int n = 200000;
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = src();
    s += x;
    ss += x * x;
  }
  const double mean = s / n;
  const double var = ss / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 4.0 / std::sqrt(double(n)));
  EXPECT_NEAR(var, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
  setenv("IGSSM_THREADS", "4", 1);
  std::vector<std::atomic<int>> hits(1001);
  igssm::parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  unsetenv("IGSSM_THREADS");
}

TEST(ParallelFor, ThreadCountDoesNotChangeResults) {
  auto run = [](const char* threads) {
    setenv("IGSSM_THREADS", threads, 1);
    std::vector<double> out(257);
    igssm::parallel_for(out.size(), [&](std::size_t i) {
      NormalSource src(make_stream(99, i));
      out[i] = src() + src();
    });
    unsetenv("IGSSM_THREADS");
    return out;
  };
  EXPECT_EQ(run("1"), run("3"));
}

TEST(ParallelFor, PropagatesExceptions) {
  setenv("IGSSM_THREADS", "2", 1);
  EXPECT_THROW(igssm::parallel_for(10,
                                   [](std::size_t i) {
                                     if (i == 5) throw std::runtime_error("boom");
                                   }),
               std::runtime_error);
  unsetenv("IGSSM_THREADS");
}

TEST(ThreadCount, HonoursEnvironment) {
  setenv("IGSSM_THREADS", "1", 1);
  EXPECT_EQ(igssm::thread_count(), 1u);
  setenv("IGSSM_THREADS", "garbage", 1);
  EXPECT_GE(igssm::thread_count(), 1u);
  unsetenv("IGSSM_THREADS");
}

}  // namespace
