#include "phylosim/random.hpp"

#include <cmath>

#include "phylosim/errors.hpp"

namespace phylosim {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void philox_round(std::array<std::uint32_t, 4>& x, const std::array<std::uint32_t, 2>& k) {
  const std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * x[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * x[2];
  const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const auto lo0 = static_cast<std::uint32_t>(p0);
  const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const auto lo1 = static_cast<std::uint32_t>(p1);
  x = {hi1 ^ x[1] ^ k[0], lo1, hi0 ^ x[3] ^ k[1], lo0};
}

}  // namespace

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::array<std::uint32_t, 4> RandomStream::philox4x32(std::array<std::uint32_t, 4> counter,
                                                      std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    philox_round(counter, key);
  }
  return counter;
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream) : seed_{seed}, stream_{stream} {
  const std::uint64_t k = mix64(mix64(seed) ^ mix64(stream ^ 0xA5A5A5A5A5A5A5A5ull));
  key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

std::uint32_t RandomStream::next_u32() {
  if (block_pos_ == 4) {
    block_ = philox4x32(counter_, key_);
    // 128-bit counter increment
    for (int i = 0; i < 4; ++i) {
      if (++counter_[i] != 0) break;
    }
    block_pos_ = 0;
  }
  return block_[block_pos_++];
}

std::uint64_t RandomStream::next_u64() {
  const std::uint64_t lo = next_u32();
  const std::uint64_t hi = next_u32();
  return (hi << 32) | lo;
}

double RandomStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RandomStream::uniform_pos() { return 1.0 - uniform(); }

double RandomStream::exponential(double rate) {
  require(rate > 0.0, ErrorCode::precondition_violated, "exponential: rate must be positive");
  return -std::log(uniform_pos()) / rate;
}

double RandomStream::normal(double mean, double sd) {
  const double r = std::sqrt(-2.0 * std::log(uniform_pos()));
  const double theta = 6.283185307179586476925286766559 * uniform();
  return mean + sd * r * std::cos(theta);
}

std::size_t RandomStream::uniform_index(std::size_t n) {
  require(n >= 1, ErrorCode::precondition_violated, "uniform_index: empty range");
  // rejection-free multiply-shift; bias below 2^-64 is irrelevant at desk scale
  const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<std::size_t>(wide >> 64);
}

std::size_t RandomStream::pick_weighted(std::span<const double> w, double total) {
  require(!w.empty() && total > 0.0, ErrorCode::precondition_violated, "pick_weighted: empty or zero-mass weights");
  double u = uniform() * total;
  for (std::size_t i = 0; i + 1 < w.size(); ++i) {
    u -= w[i];
    if (u < 0.0) return i;
  }
  return w.size() - 1;
}

RandomStream RandomStream::split(std::uint64_t salt) const {
  return RandomStream{mix64(seed_ ^ mix64(stream_)) ^ 0x5851F42D4C957F2Dull, mix64(salt)};
}

}  // namespace phylosim
