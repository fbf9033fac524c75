#include <atomic>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "floodwatch/simd/kernels.hpp"
#include "kernel_table.hpp"

namespace floodwatch::simd {

namespace {

// -1: automatic; otherwise static_cast<int>(Isa)
std::atomic<int> g_forced{-1};

const detail::KernelTable& table_for(Isa isa) {
  if (!isa_available(isa)) {
    throw std::invalid_argument("ISA not available on this CPU: " + std::string(to_string(isa)));
  }
#if defined(__x86_64__) || defined(__i386__)
  if (isa == Isa::avx2) return detail::kAvx2Kernels;
#endif
  return detail::kScalarKernels;
}

struct AxisMap {
  std::vector<std::int32_t> lo;
  std::vector<std::int32_t> hi;
  std::vector<std::int32_t> weight;
};

AxisMap map_axis(int src, int dst) {
  AxisMap m;
  m.lo.resize(dst);
  m.hi.resize(dst);
  m.weight.resize(dst);
  const double ratio = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    double pos = (i + 0.5) * ratio - 0.5;
    if (pos < 0.0) pos = 0.0;
    int lo = static_cast<int>(std::floor(pos));
    double frac = pos - lo;
    if (lo >= src - 1) {
      lo = src - 1;
      frac = 0.0;
    }
    m.lo[i] = lo;
    m.hi[i] = std::min(lo + 1, src - 1);
    m.weight[i] = static_cast<std::int32_t>(std::lround(frac * detail::kWeightOne));
  }
  return m;
}

template <class... Spans>
void require_same_size(std::size_t n, const Spans&... s) {
  if (((s.size() != n) || ...)) throw std::invalid_argument("simd kernel: span size mismatch");
}

}  // namespace

std::string_view to_string(Isa isa) {
  return isa == Isa::avx2 ? "avx2" : "scalar";
}

Isa detected_isa() {
#if defined(__x86_64__) || defined(__i386__)
  static const bool has_avx2 = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") != 0;
  }();
  if (has_avx2) return Isa::avx2;
#endif
  return Isa::scalar;
}

bool isa_available(Isa isa) {
  return isa == Isa::scalar || detected_isa() == Isa::avx2;
}

void force_isa(std::optional<Isa> isa) {
  g_forced.store(isa ? static_cast<int>(*isa) : -1);
}

Isa active_isa() {
  const int forced = g_forced.load();
  if (forced >= 0) return static_cast<Isa>(forced);
  if (const char* env = std::getenv("FLOODWATCH_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && isa_available(Isa::avx2)) return Isa::avx2;
  }
  return detected_isa();
}

Image resize_bilinear(const Image& src, int width, int height) {
  return resize_bilinear(src, width, height, active_isa());
}

Image resize_bilinear(const Image& src, int width, int height, Isa isa) {
  if (src.empty() || width <= 0 || height <= 0) {
    throw std::invalid_argument("resize_bilinear: empty source or target");
  }
  const auto& k = table_for(isa);
  const AxisMap xs = map_axis(src.width, width);
  const AxisMap ys = map_axis(src.height, height);

  const std::size_t n = static_cast<std::size_t>(width) * 3;
  std::vector<std::int32_t> off0(n), off1(n), wx(n);
  for (int x = 0; x < width; ++x) {
    for (int c = 0; c < 3; ++c) {
      const std::size_t j = static_cast<std::size_t>(x) * 3 + c;
      off0[j] = xs.lo[x] * 3 + c;
      off1[j] = xs.hi[x] * 3 + c;
      wx[j] = xs.weight[x];
    }
  }

  Image dst(width, height);
  std::vector<std::int32_t> row_a(n), row_b(n);
  int cached_a = -1;
  int cached_b = -1;
  auto horizontal = [&](int sy, std::vector<std::int32_t>& out) {
    const std::uint8_t* row = src.row(sy);
    const std::size_t avail = src.rgb.size() - static_cast<std::size_t>(row - src.rgb.data());
    k.hblend(row, avail, off0.data(), off1.data(), wx.data(), out.data(), n);
  };
  for (int y = 0; y < height; ++y) {
    const int ya = ys.lo[y];
    const int yb = ys.hi[y];
    if (ya != cached_a) {
      if (ya == cached_b) {
        std::swap(row_a, row_b);
        std::swap(cached_a, cached_b);
      } else {
        horizontal(ya, row_a);
        cached_a = ya;
      }
    }
    if (yb != cached_b) {
      horizontal(yb, row_b);
      cached_b = yb;
    }
    k.vblend(row_a.data(), row_b.data(), ys.weight[y], dst.row(y), n);
  }
  return dst;
}

void waterline_fraction(std::span<const double> top, std::span<const double> bottom,
                        std::span<const double> waterline, std::span<double> out) {
  waterline_fraction(top, bottom, waterline, out, active_isa());
}

void waterline_fraction(std::span<const double> top, std::span<const double> bottom,
                        std::span<const double> waterline, std::span<double> out, Isa isa) {
  require_same_size(out.size(), top, bottom, waterline);
  table_for(isa).waterline_fraction(top.data(), bottom.data(), waterline.data(), out.data(),
                                    out.size());
}

void mask_fraction(std::span<const double> top, std::span<const double> bottom,
                   std::span<const double> mask_top, std::span<const double> mask_bottom,
                   std::span<double> out) {
  mask_fraction(top, bottom, mask_top, mask_bottom, out, active_isa());
}

void mask_fraction(std::span<const double> top, std::span<const double> bottom,
                   std::span<const double> mask_top, std::span<const double> mask_bottom,
                   std::span<double> out, Isa isa) {
  require_same_size(out.size(), top, bottom, mask_top, mask_bottom);
  table_for(isa).mask_fraction(top.data(), bottom.data(), mask_top.data(), mask_bottom.data(),
                               out.data(), out.size());
}

void scale(std::span<const double> in, double factor, std::span<double> out) {
  scale(in, factor, out, active_isa());
}

void scale(std::span<const double> in, double factor, std::span<double> out, Isa isa) {
  require_same_size(out.size(), in);
  table_for(isa).scale(in.data(), factor, out.data(), out.size());
}

}  // namespace floodwatch::simd
