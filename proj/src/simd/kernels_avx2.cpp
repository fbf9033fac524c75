// Compiled with -mavx2; only reached after a runtime CPU check.

#include <immintrin.h>

#include "kernel_table.hpp"

namespace floodwatch::simd::detail {

namespace {

void hblend(const std::uint8_t* src, std::size_t src_avail, const std::int32_t* off0,
            const std::int32_t* off1, const std::int32_t* wx, std::int32_t* out,
            std::size_t n) {
  const __m256i one = _mm256_set1_epi32(kWeightOne);
  const __m256i low_byte = _mm256_set1_epi32(0xFF);
  const auto* base = reinterpret_cast<const int*>(src);
  std::size_t j = 0;
  // Gathers read 4 bytes per lane. Offsets are laid out as x*3+c with x
  // nondecreasing, so the block's widest read is bounded by the c=2 slot of
  // its last pixel.
  for (; j + 8 <= n; j += 8) {
    std::size_t probe = j + 7 + (2 - (j + 7) % 3);
    if (probe >= n) probe = n - 1;
    if (static_cast<std::size_t>(off1[probe]) + 4 > src_avail) break;
    const __m256i i0 = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(off0 + j));
    const __m256i i1 = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(off1 + j));
    const __m256i w = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(wx + j));
    const __m256i p0 = _mm256_and_si256(_mm256_i32gather_epi32(base, i0, 1), low_byte);
    const __m256i p1 = _mm256_and_si256(_mm256_i32gather_epi32(base, i1, 1), low_byte);
    const __m256i r = _mm256_add_epi32(_mm256_mullo_epi32(p0, _mm256_sub_epi32(one, w)),
                                       _mm256_mullo_epi32(p1, w));
    _mm256_storeu_si256(reinterpret_cast<__m256i*>(out + j), r);
  }
  for (; j < n; ++j) {
    out[j] = src[off0[j]] * (kWeightOne - wx[j]) + src[off1[j]] * wx[j];
  }
}

void vblend(const std::int32_t* a, const std::int32_t* b, std::int32_t wy, std::uint8_t* out,
            std::size_t n) {
  constexpr std::int32_t round = 1 << (2 * kWeightBits - 1);
  const std::int32_t wa_s = kWeightOne - wy;
  const __m256i wa = _mm256_set1_epi32(wa_s);
  const __m256i wb = _mm256_set1_epi32(wy);
  const __m256i rnd = _mm256_set1_epi32(round);
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    const __m256i va = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(a + j));
    const __m256i vb = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(b + j));
    __m256i r = _mm256_add_epi32(_mm256_mullo_epi32(va, wa), _mm256_mullo_epi32(vb, wb));
    r = _mm256_srai_epi32(_mm256_add_epi32(r, rnd), 2 * kWeightBits);
    const __m128i p16 =
        _mm_packus_epi32(_mm256_castsi256_si128(r), _mm256_extracti128_si256(r, 1));
    _mm_storel_epi64(reinterpret_cast<__m128i*>(out + j), _mm_packus_epi16(p16, p16));
  }
  for (; j < n; ++j) {
    out[j] = static_cast<std::uint8_t>((a[j] * wa_s + b[j] * wy + round) >> (2 * kWeightBits));
  }
}

inline __m256d clamp01(__m256d v) {
  return _mm256_min_pd(_mm256_max_pd(v, _mm256_setzero_pd()), _mm256_set1_pd(1.0));
}

inline double clamp01(double v) {
  v = v > 0.0 ? v : 0.0;
  return v < 1.0 ? v : 1.0;
}

void waterline_fraction(const double* top, const double* bottom, const double* waterline,
                        double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t = _mm256_loadu_pd(top + i);
    const __m256d b = _mm256_loadu_pd(bottom + i);
    const __m256d w = _mm256_loadu_pd(waterline + i);
    const __m256d f = _mm256_div_pd(_mm256_sub_pd(b, w), _mm256_sub_pd(b, t));
    _mm256_storeu_pd(out + i, clamp01(f));
  }
  for (; i < n; ++i) out[i] = clamp01((bottom[i] - waterline[i]) / (bottom[i] - top[i]));
}

void mask_fraction(const double* top, const double* bottom, const double* mask_top,
                   const double* mask_bottom, double* out, std::size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t = _mm256_loadu_pd(top + i);
    const __m256d b = _mm256_loadu_pd(bottom + i);
    const __m256d mt = _mm256_loadu_pd(mask_top + i);
    const __m256d mb = _mm256_loadu_pd(mask_bottom + i);
    const __m256d visible = _mm256_div_pd(_mm256_sub_pd(mb, mt), _mm256_sub_pd(b, t));
    _mm256_storeu_pd(out + i, clamp01(_mm256_sub_pd(one, visible)));
  }
  for (; i < n; ++i) {
    out[i] = clamp01(1.0 - (mask_bottom[i] - mask_top[i]) / (bottom[i] - top[i]));
  }
}

void scale(const double* in, double factor, double* out, std::size_t n) {
  const __m256d f = _mm256_set1_pd(factor);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(in + i), f));
  for (; i < n; ++i) out[i] = in[i] * factor;
}

}  // namespace

const KernelTable kAvx2Kernels{hblend, vblend, waterline_fraction, mask_fraction, scale};

}  // namespace floodwatch::simd::detail
