#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace phylosim {

// Counter-based stream (Philox-4x32-10).  Replicate k of an experiment draws
// from RandomStream(seed, k); streams with distinct (seed, stream) pairs are
// independent for simulation purposes, so parallel ensembles stay reproducible
// no matter how replicates are scheduled onto workers.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream);

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  // uniform on [0,1) with 53 random bits
  double uniform();
  // uniform on (0,1]
  double uniform_pos();
  double exponential(double rate);
  double normal(double mean, double sd);
  // uniform over {0,...,n-1}, n >= 1
  std::size_t uniform_index(std::size_t n);
  // index i with probability w[i]/total; total must equal sum(w) up to rounding
  std::size_t pick_weighted(std::span<const double> w, double total);

  // Derived independent stream; deterministic in (parent identity, salt).
  RandomStream split(std::uint64_t salt) const;

  // Raw block generator, exposed for known-answer tests.
  static std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                                 std::array<std::uint32_t, 2> key);

 private:
  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_{};
  std::array<std::uint32_t, 4> block_{};
  int block_pos_ = 4;  // forces a fresh block on first use

  std::uint64_t seed_;
  std::uint64_t stream_;
};

// SplitMix64 finalizer; used for key derivation and config hashing.
std::uint64_t mix64(std::uint64_t x);

}  // namespace phylosim
