#pragma once

// N-bit uniform quantizers for gradient matrices.
//
// Every quantizer normalizes by the per-matrix scale γ = 2·max|g|, shifts the
// result into [0, 1], snaps it to the grid {k / (2^N − 1)} and maps back:
//
//   value = γ · (code / (2^N − 1) − ½)
//
// The three modes differ only in how `code` is chosen:
//   NearestTies              code = ⌊v·L⌉
//   LandingDirected          code = ⌊v·L⌋ + b,     b = ⌊sigmoid(∇N)⌉ ∈ {0,1}
//   LandingDirectedDithered  code = ⌊(v+u)·L⌋ + b, u ~ U(−½/L, +½/L)
// with v = g/γ + ½ and L = 2^N − 1. Codes saturate to [0, L] so they fit the
// N-bit wire format; only entries at ±max|g| can hit the bounds.

#include "qrgt/random.hpp"
#include "qrgt/types.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace qrgt {

class BitWidth {
 public:
  explicit BitWidth(int bits = 8) : bits_(bits) {
    if (bits < 1 || bits > 32)
      throw ValidationError("bit width must lie in [1, 32], got " +
                            std::to_string(bits));
  }

  int bits() const noexcept { return bits_; }
  /// Number of grid intervals, 2^N − 1.
  std::uint64_t levels() const noexcept { return (std::uint64_t{1} << bits_) - 1; }
  /// Grid spacing in normalized units.
  double step() const noexcept { return 1.0 / static_cast<double>(levels()); }

  friend bool operator==(BitWidth, BitWidth) = default;

 private:
  int bits_;
};

enum class QuantMode { NearestTies, LandingDirected, LandingDirectedDithered };

enum class TieRule { HalfToEven, HalfAwayFromZero };

struct QuantizerSpec {
  BitWidth bits{8};
  QuantMode mode = QuantMode::LandingDirectedDithered;
  std::uint64_t dither_seed = 0;
  TieRule ties = TieRule::HalfToEven;
};

using CodeMatrix =
    Eigen::Matrix<std::uint32_t, Eigen::Dynamic, Eigen::Dynamic>;

struct QuantizedGradient {
  Matrix value;
  double scale = 0.0;
  CodeMatrix codes;
};

inline double round_ties(double v, TieRule rule) {
  if (rule == TieRule::HalfAwayFromZero) return std::round(v);
  const double f = std::floor(v);
  const double frac = v - f;
  if (frac > 0.5) return f + 1.0;
  if (frac < 0.5) return f;
  return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// ⌊sigmoid(p)⌉: 1 where the penalty gradient is positive, 0 where negative.
inline int direction_bit(double pgrad, TieRule rule) {
  if (pgrad > 1e-12) return 1;
  if (pgrad < -1e-12) return 0;
  return static_cast<int>(round_ties(sigmoid(pgrad), rule));
}

/// γ(g) = 2·max|g_ij|.
inline double scale_factor(const Matrix& g) {
  return g.size() == 0 ? 0.0 : 2.0 * g.cwiseAbs().maxCoeff();
}

inline double dequantize_code(std::uint32_t code, double scale, BitWidth bits) {
  return scale * (static_cast<double>(code) / static_cast<double>(bits.levels()) - 0.5);
}

inline Matrix dequantize(const CodeMatrix& codes, double scale, BitWidth bits) {
  Matrix out(codes.rows(), codes.cols());
  for (Eigen::Index i = 0; i < codes.rows(); ++i)
    for (Eigen::Index j = 0; j < codes.cols(); ++j)
      out(i, j) = dequantize_code(codes(i, j), scale, bits);
  return out;
}

namespace detail {

inline std::uint32_t saturate(double level, BitWidth bits) {
  const double hi = static_cast<double>(bits.levels());
  return static_cast<std::uint32_t>(std::clamp(level, 0.0, hi));
}

/// Shared driver: `pick(i, j, v)` returns the unsaturated grid level for the
/// normalized, shifted entry v. Entries are visited in row-major order.
template <class Pick>
QuantizedGradient quantize_with(const Matrix& g, BitWidth bits, Pick pick) {
  QuantizedGradient q;
  q.scale = scale_factor(g);
  q.codes.resize(g.rows(), g.cols());
  q.value.resize(g.rows(), g.cols());
  if (q.scale == 0.0) {
    // Zero gradient: skip the division, emit the zero matrix. Code L/2 is not
    // representable for odd L, so codes are left at 0 and value forced to 0.
    q.codes.setZero();
    q.value.setZero();
    return q;
  }
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
      const double v = g(i, j) / q.scale + 0.5;
      const std::uint32_t code = saturate(pick(i, j, v), bits);
      q.codes(i, j) = code;
      q.value(i, j) = dequantize_code(code, q.scale, bits);
    }
  }
  return q;
}

}  // namespace detail

inline QuantizedGradient quantize_nearest(const Matrix& g,
                                          const QuantizerSpec& spec) {
  const double L = static_cast<double>(spec.bits.levels());
  return detail::quantize_with(g, spec.bits, [&](Eigen::Index, Eigen::Index, double v) {
    return round_ties(v * L, spec.ties);
  });
}

inline QuantizedGradient quantize_landing(const Matrix& g, const Matrix& pgrad,
                                          const QuantizerSpec& spec) {
  require_same_shape(g, pgrad, "quantize_landing");
  const double L = static_cast<double>(spec.bits.levels());
  return detail::quantize_with(g, spec.bits, [&](Eigen::Index i, Eigen::Index j, double v) {
    return std::floor(v * L) + direction_bit(pgrad(i, j), spec.ties);
  });
}

/// Landing-directed quantizer with uniform dither. γ is taken from g alone;
/// one dither value is consumed per entry in row-major order.
inline QuantizedGradient quantize_dithered(const Matrix& g, const Matrix& pgrad,
                                           const QuantizerSpec& spec,
                                           DitherSource& dither) {
  require_same_shape(g, pgrad, "quantize_dithered");
  const double L = static_cast<double>(spec.bits.levels());
  const double half_width = 0.5 / L;
  Matrix u(g.rows(), g.cols());
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j) u(i, j) = dither.next(half_width);
  return detail::quantize_with(g, spec.bits, [&](Eigen::Index i, Eigen::Index j, double v) {
    return std::floor((v + u(i, j)) * L) + direction_bit(pgrad(i, j), spec.ties);
  });
}

/// Dispatch on spec.mode.
inline QuantizedGradient quantize(const Matrix& g, const Matrix& pgrad,
                                  const QuantizerSpec& spec,
                                  DitherSource& dither) {
  switch (spec.mode) {
    case QuantMode::NearestTies:
      return quantize_nearest(g, spec);
    case QuantMode::LandingDirected:
      return quantize_landing(g, pgrad, spec);
    case QuantMode::LandingDirectedDithered:
      return quantize_dithered(g, pgrad, spec, dither);
  }
  throw ValidationError("quantize: unknown mode");
}

/// Payload of one quantized message: N bits per entry plus a 64-bit scale.
inline std::int64_t wire_size_bits(const QuantizedGradient& q,
                                   const QuantizerSpec& spec) {
  return static_cast<std::int64_t>(q.codes.size()) * spec.bits.bits() + 64;
}

// --- wire format -----------------------------------------------------------
//
// Codes are packed LSB-first into a little-endian bit stream in row-major
// order, followed by the scale as a little-endian IEEE-754 binary64.

inline std::vector<std::uint8_t> pack_codes(const QuantizedGradient& q,
                                            BitWidth bits) {
  const int N = bits.bits();
  const std::size_t count = static_cast<std::size_t>(q.codes.size());
  std::vector<std::uint8_t> out((count * N + 7) / 8 + 8, 0);
  std::size_t bitpos = 0;
  for (Eigen::Index i = 0; i < q.codes.rows(); ++i) {
    for (Eigen::Index j = 0; j < q.codes.cols(); ++j) {
      const std::uint64_t code = q.codes(i, j);
      for (int b = 0; b < N; ++b, ++bitpos)
        if ((code >> b) & 1u) out[bitpos / 8] |= static_cast<std::uint8_t>(1u << (bitpos % 8));
    }
  }
  const std::uint64_t raw = std::bit_cast<std::uint64_t>(q.scale);
  const std::size_t base = (count * N + 7) / 8;
  for (int k = 0; k < 8; ++k) out[base + k] = static_cast<std::uint8_t>(raw >> (8 * k));
  return out;
}

inline QuantizedGradient unpack_codes(std::span<const std::uint8_t> bytes,
                                      Eigen::Index rows, Eigen::Index cols,
                                      BitWidth bits) {
  const int N = bits.bits();
  const std::size_t count = static_cast<std::size_t>(rows * cols);
  const std::size_t base = (count * N + 7) / 8;
  if (bytes.size() != base + 8)
    throw IngestionError("unpack_codes: expected " + std::to_string(base + 8) +
                         " bytes, got " + std::to_string(bytes.size()));
  QuantizedGradient q;
  q.codes.resize(rows, cols);
  std::size_t bitpos = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      std::uint64_t code = 0;
      for (int b = 0; b < N; ++b, ++bitpos)
        if ((bytes[bitpos / 8] >> (bitpos % 8)) & 1u) code |= std::uint64_t{1} << b;
      q.codes(i, j) = static_cast<std::uint32_t>(code);
    }
  }
  std::uint64_t raw = 0;
  for (int k = 0; k < 8; ++k) raw |= static_cast<std::uint64_t>(bytes[base + k]) << (8 * k);
  q.scale = std::bit_cast<double>(raw);
  q.value = q.scale == 0.0 ? Matrix::Zero(rows, cols) : dequantize(q.codes, q.scale, bits);
  return q;
}

}  // namespace qrgt
