#pragma once

#include <cstdint>
#include <vector>

namespace facegen {

// splitmix64 step; also used to derive per-task seed substreams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic substream seed for worker/identity `index` under a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t s = master ^ (0x632be59bd9b4e019ull + index * 0x9e3779b97f4a7c15ull);
  std::uint64_t a = splitmix64(s);
  s ^= a;
  return splitmix64(s);
}

// Self-contained xoshiro256++ generator. The normal sampler is hand-rolled
// (Box-Muller) so that streams are reproducible byte-for-byte and do not
// depend on the standard library's unspecified distribution algorithms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) w = splitmix64(s);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe as a log argument.
  double uniform_pos() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  // Standard normal via Box-Muller; the sine branch is discarded to keep the
  // stream position independent of call parity.
  double normal();
  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  std::vector<double> normal_vec(std::size_t n, double sigma = 1.0);

  // Uniform index in [0, n).
  std::size_t index(std::size_t n);

  // k distinct indices out of [0, n), in the order they were drawn.
  std::vector<std::size_t> sample_without_replacement(std::size_t k, std::size_t n);

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

}  // namespace facegen
