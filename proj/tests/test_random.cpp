#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "phylosim/random.hpp"

using namespace phylosim;

TEST_CASE("philox known answers") {
  // Reference vectors for Philox-4x32 with 10 rounds.
  const auto zero = RandomStream::philox4x32({0, 0, 0, 0}, {0, 0});
  CHECK(zero == std::array<std::uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});

  const auto ones = RandomStream::philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                             {0xffffffffu, 0xffffffffu});
  CHECK(ones == std::array<std::uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});

  const auto pi = RandomStream::philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                           {0xa4093822u, 0x299f31d0u});
  CHECK(pi == std::array<std::uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("streams are reproducible and distinct") {
  RandomStream a(42, 7), b(42, 7), c(42, 8);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 64; ++i) {
    const auto x = a.next_u32();
    all_equal = all_equal && x == b.next_u32();
    any_diff = any_diff || x != c.next_u32();
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("uniform ranges") {
  RandomStream rng(1, 0);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double v = rng.uniform_pos();
    CHECK(v > 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("exponential and normal match their first moments") {
  RandomStream rng(3, 1);
  const int n = 40000;
  double se = 0.0, sn = 0.0, sn2 = 0.0;
  for (int i = 0; i < n; ++i) {
    se += rng.exponential(2.0);
    const double z = rng.normal(1.0, 0.5);
    sn += z;
    sn2 += z * z;
  }
  const double mean_exp = se / n;
  const double mean_n = sn / n;
  const double var_n = sn2 / n - mean_n * mean_n;
  CHECK(mean_exp == doctest::Approx(0.5).epsilon(0.03));
  CHECK(mean_n == doctest::Approx(1.0).epsilon(0.02));
  CHECK(var_n == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("uniform_index stays in range with small total-variation error") {
  RandomStream rng(5, 2);
  const std::size_t bins = 6;
  const int n = 60000;
  std::vector<int> hits(bins, 0);
  for (int i = 0; i < n; ++i) {
    const std::size_t k = rng.uniform_index(bins);
    REQUIRE(k < bins);
    ++hits[k];
  }
  double tv = 0.0;
  for (std::size_t k = 0; k < bins; ++k)
    tv += std::abs(static_cast<double>(hits[k]) / n - 1.0 / static_cast<double>(bins));
  CHECK(tv / 2.0 <= 0.02);
}

TEST_CASE("pick_weighted respects the weights") {
  RandomStream rng(9, 4);
  const std::vector<double> w = {0.1, 0.0, 0.5, 0.4};
  const int n = 60000;
  std::vector<int> hits(w.size(), 0);
  for (int i = 0; i < n; ++i) ++hits[rng.pick_weighted(w, 1.0)];
  CHECK(hits[1] == 0);  // zero weight is never picked
  double tv = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k)
    tv += std::abs(static_cast<double>(hits[k]) / n - w[k]);
  CHECK(tv / 2.0 <= 0.02);
}

TEST_CASE("split derives reproducible independent streams") {
  RandomStream base(11, 3);
  RandomStream s1 = base.split(1);
  RandomStream s1_again = RandomStream(11, 3).split(1);
  RandomStream s2 = base.split(2);
  bool same = true, diff = false;
  for (int i = 0; i < 32; ++i) {
    const auto x = s1.next_u32();
    same = same && x == s1_again.next_u32();
    diff = diff || x != s2.next_u32();
  }
  CHECK(same);
  CHECK(diff);
}

TEST_CASE("mix64 is deterministic and spreads inputs") {
  CHECK(mix64(1) == mix64(1));
  CHECK(mix64(1) != mix64(2));
  CHECK(mix64(0x123456789abcdefull) != 0x123456789abcdefull);
}
