#include "kernel_table.hpp"

namespace floodwatch::simd::detail {

namespace {

inline double clamp01(double v) {
  // Same comparison order as the vector max/min so NaN handling matches.
  v = v > 0.0 ? v : 0.0;
  return v < 1.0 ? v : 1.0;
}

void hblend(const std::uint8_t* src, std::size_t, const std::int32_t* off0,
            const std::int32_t* off1, const std::int32_t* wx, std::int32_t* out,
            std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = src[off0[j]] * (kWeightOne - wx[j]) + src[off1[j]] * wx[j];
  }
}

void vblend(const std::int32_t* a, const std::int32_t* b, std::int32_t wy, std::uint8_t* out,
            std::size_t n) {
  constexpr std::int32_t round = 1 << (2 * kWeightBits - 1);
  const std::int32_t wa = kWeightOne - wy;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = static_cast<std::uint8_t>((a[j] * wa + b[j] * wy + round) >> (2 * kWeightBits));
  }
}

void waterline_fraction(const double* top, const double* bottom, const double* waterline,
                        double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = clamp01((bottom[i] - waterline[i]) / (bottom[i] - top[i]));
  }
}

void mask_fraction(const double* top, const double* bottom, const double* mask_top,
                   const double* mask_bottom, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = clamp01(1.0 - (mask_bottom[i] - mask_top[i]) / (bottom[i] - top[i]));
  }
}

void scale(const double* in, double factor, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = in[i] * factor;
}

}  // namespace

const KernelTable kScalarKernels{hblend, vblend, waterline_fraction, mask_fraction, scale};

}  // namespace floodwatch::simd::detail
