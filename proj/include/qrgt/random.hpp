#pragma once

#include "qrgt/types.hpp"

#include <array>
#include <cstdint>
#include <random>

namespace qrgt {

/// Purpose tags for splitting one run seed into independent sub-seeds.
enum class SeedPurpose : std::uint32_t {
  Data = 1,
  Init = 2,
  Dither = 3,
  Topology = 4,
  Shuffle = 5,
};

/// Derives a 64-bit sub-seed from (seed, purpose, a, b) through std::seed_seq.
/// Distinct keys give statistically independent engines, and the mapping does
/// not depend on call order, so agents may draw in any schedule.
inline std::uint64_t derive_seed(std::uint64_t seed, SeedPurpose purpose,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose),
                    static_cast<std::uint32_t>(a),
                    static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// Uniform double in [0, 1) from the top 53 bits; platform independent,
/// unlike std::uniform_real_distribution.
inline double canonical_uniform(std::mt19937_64& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

/// Source of dither values u ~ U(-half_width, +half_width), drawn entrywise in
/// row-major order.
class DitherSource {
 public:
  virtual ~DitherSource() = default;
  virtual double next(double half_width) = 0;
};

/// Dither stream keyed by (run seed, agent, epoch). SplitMix64 output
/// function over a counter: one fresh stream per agent per epoch, so setup
/// cost matters more than period.
class DitherStream final : public DitherSource {
 public:
  DitherStream(std::uint64_t seed, std::uint64_t agent, std::uint64_t epoch)
      : state_(derive_seed(seed, SeedPurpose::Dither, agent, epoch)) {}

  double next(double half_width) override {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return (2.0 * (static_cast<double>(z >> 11) * 0x1.0p-53) - 1.0) * half_width;
  }

 private:
  std::uint64_t state_;
};

/// Degenerate dither: always zero.
class ZeroDither final : public DitherSource {
 public:
  double next(double) override { return 0.0; }
};

/// d×r matrix of i.i.d. standard normals.
inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols,
                              std::mt19937_64& eng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(eng);
  return m;
}

}  // namespace qrgt
