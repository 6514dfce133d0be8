#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedsample {

/// Mixes a base seed with a list of tags (round, client id, epoch, ...) into
/// an independent stream seed. Order of tags matters.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) noexcept;

/// Stream tags used when deriving per-purpose seeds.
namespace stream {
inline constexpr std::uint64_t init = 0x696e6974;
inline constexpr std::uint64_t select = 0x73656c;
inline constexpr std::uint64_t train = 0x747261;
inline constexpr std::uint64_t shuffle = 0x736875;
inline constexpr std::uint64_t dropout = 0x64726f;
inline constexpr std::uint64_t track = 0x747263;
inline constexpr std::uint64_t data = 0x646174;
}  // namespace stream

/// 64-bit Mersenne twister with distribution code written out here, so that
/// streams are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via the Marsaglia polar method.
  double normal();

  /// Uniform integer on [0, n); n must be > 0.
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fedsample
