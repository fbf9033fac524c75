#pragma once

#include <cstddef>
#include <cstdint>

namespace floodwatch::simd::detail {

inline constexpr int kWeightBits = 11;
inline constexpr std::int32_t kWeightOne = 1 << kWeightBits;

struct KernelTable {
  // out[j] = src[off0[j]] * (ONE - wx[j]) + src[off1[j]] * wx[j]
  // `src_avail` is the number of readable bytes starting at `src`.
  void (*hblend)(const std::uint8_t* src, std::size_t src_avail, const std::int32_t* off0,
                 const std::int32_t* off1, const std::int32_t* wx, std::int32_t* out,
                 std::size_t n);
  // out[j] = (a[j] * (ONE - wy) + b[j] * wy + 2^(2*bits-1)) >> 2*bits
  void (*vblend)(const std::int32_t* a, const std::int32_t* b, std::int32_t wy,
                 std::uint8_t* out, std::size_t n);
  void (*waterline_fraction)(const double* top, const double* bottom, const double* waterline,
                             double* out, std::size_t n);
  void (*mask_fraction)(const double* top, const double* bottom, const double* mask_top,
                        const double* mask_bottom, double* out, std::size_t n);
  void (*scale)(const double* in, double factor, double* out, std::size_t n);
};

extern const KernelTable kScalarKernels;
#if defined(__x86_64__) || defined(__i386__)
extern const KernelTable kAvx2Kernels;
#endif

}  // namespace floodwatch::simd::detail
