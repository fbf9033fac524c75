#pragma once

// Data-parallel inner loops with a scalar reference and vector variants
// selected at runtime. Every variant must produce bit-identical output to the
// scalar reference; tests/simd_equivalence_test.cpp enforces it.

#include <optional>
#include <span>
#include <string_view>

#include "floodwatch/image.hpp"

namespace floodwatch::simd {

enum class Isa { scalar, avx2 };

std::string_view to_string(Isa isa);

/// Best ISA the running CPU supports.
Isa detected_isa();

/// ISA used by the dispatching overloads: `force_isa` override, else the
/// FLOODWATCH_SIMD environment variable ("scalar" / "avx2"), else detected.
Isa active_isa();

/// Pins dispatch for tests; std::nullopt restores automatic selection.
void force_isa(std::optional<Isa> isa);

bool isa_available(Isa isa);

/// Bilinear resize without aspect preservation, half-pixel centers, Q11 fixed
/// point weights. Deterministic across ISAs.
Image resize_bilinear(const Image& src, int width, int height);
Image resize_bilinear(const Image& src, int width, int height, Isa isa);

/// out[i] = clamp((bottom[i] - waterline[i]) / (bottom[i] - top[i]), 0, 1)
void waterline_fraction(std::span<const double> top, std::span<const double> bottom,
                        std::span<const double> waterline, std::span<double> out);
void waterline_fraction(std::span<const double> top, std::span<const double> bottom,
                        std::span<const double> waterline, std::span<double> out, Isa isa);

/// out[i] = clamp(1 - (mask_bottom[i] - mask_top[i]) / (bottom[i] - top[i]), 0, 1)
void mask_fraction(std::span<const double> top, std::span<const double> bottom,
                   std::span<const double> mask_top, std::span<const double> mask_bottom,
                   std::span<double> out);
void mask_fraction(std::span<const double> top, std::span<const double> bottom,
                   std::span<const double> mask_top, std::span<const double> mask_bottom,
                   std::span<double> out, Isa isa);

/// out[i] = in[i] * factor
void scale(std::span<const double> in, double factor, std::span<double> out);
void scale(std::span<const double> in, double factor, std::span<double> out, Isa isa);

}  // namespace floodwatch::simd
