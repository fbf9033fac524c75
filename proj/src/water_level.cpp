#include "floodwatch/water_level.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include "floodwatch/simd/kernels.hpp"

namespace floodwatch {

namespace {

inline double clamp01(double v) {
  v = v > 0.0 ? v : 0.0;
  return v < 1.0 ? v : 1.0;
}

bool parse_number(std::string_view s, double& out) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(c >= '0' && c <= '9') && c != '.') return false;
  }
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace

TireSpec TireSpec::parse(std::string_view marking) {
  auto fail = [&] { return TireMarkingError("malformed tire marking '" + std::string(marking) + "'"); };
  const auto slash = marking.find('/');
  if (slash == std::string_view::npos) throw fail();
  const std::string_view width = marking.substr(0, slash);
  std::string_view rest = marking.substr(slash + 1);

  // aspect digits, optional '/', one construction letter, rim digits
  std::size_t i = 0;
  while (i < rest.size() && ((rest[i] >= '0' && rest[i] <= '9') || rest[i] == '.')) ++i;
  const std::string_view aspect = rest.substr(0, i);
  rest.remove_prefix(i);
  if (!rest.empty() && rest.front() == '/') rest.remove_prefix(1);
  if (rest.empty() || !((rest.front() >= 'A' && rest.front() <= 'Z'))) throw fail();
  rest.remove_prefix(1);

  TireSpec spec;
  if (!parse_number(width, spec.width_mm) || !parse_number(aspect, spec.aspect_pct) ||
      !parse_number(rest, spec.rim_in)) {
    throw fail();
  }
  if (!spec.is_valid()) throw fail();
  return spec;
}

bool TireSpec::is_valid() const {
  return width_mm > 0.0 && aspect_pct > 0.0 && aspect_pct <= 100.0 && rim_in > 0.0;
}

std::string TireSpec::marking() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g/%gR%g", width_mm, aspect_pct, rim_in);
  return buf;
}

double wheel_diameter(const TireSpec& spec) {
  const double rim_cm = spec.rim_in * 2.54;
  const double width_cm = spec.width_mm / 10.0;
  return rim_cm + 2.0 * width_cm * (spec.aspect_pct / 100.0);
}

double flood_fraction(const WheelObservation& obs) {
  const double t_px = obs.box.bottom - obs.box.top;
  if (!(t_px > 0.0)) throw std::invalid_argument("wheel box must have positive height");
  if (obs.waterline_px) return clamp01((obs.box.bottom - *obs.waterline_px) / t_px);
  if (obs.visible_mask_rows) {
    const double visible = obs.visible_mask_rows->bottom - obs.visible_mask_rows->top;
    return clamp01(1.0 - visible / t_px);
  }
  throw InsufficientObservation("wheel observation has neither waterline nor mask rows");
}

double flood_depth_cm(double flood_fraction, double wheel_diameter_cm) {
  return flood_fraction * wheel_diameter_cm;
}

double flood_depth(double flood_fraction, const TireSpec& spec) {
  return flood_depth_cm(flood_fraction, wheel_diameter(spec));
}

bool compensation_flag(double depth_cm) { return depth_cm > kCompensationDepthCm; }

std::string_view to_string(Grade g) {
  switch (g) {
    case Grade::dry:
      return "dry";
    case Grade::flooded_above_third:
      return "flooded_above_third";
    case Grade::exception:
      return "exception";
  }
  return "exception";
}

std::optional<Grade> grade_from_string(std::string_view s) {
  if (s == "dry") return Grade::dry;
  if (s == "flooded_above_third") return Grade::flooded_above_third;
  if (s == "exception") return Grade::exception;
  return std::nullopt;
}

double WaterLevelConfig::effective_diameter() const {
  return wheel_diameter_cm ? *wheel_diameter_cm : wheel_diameter(tire);
}

GradeResult grade(const VehicleContext& ctx, const WaterLevelConfig& cfg) {
  const double band_top =
      ctx.vehicle_box.bottom - cfg.lower_band_fraction * ctx.vehicle_box.height();

  std::vector<const WheelObservation*> qualifying;
  for (const auto& wheel : ctx.wheels) {
    if (!(wheel.box.height() > 0.0)) continue;
    if (!ctx.vehicle_box.contains(wheel.box)) continue;
    if (wheel.box.bottom < band_top) continue;
    qualifying.push_back(&wheel);
  }
  if (qualifying.empty()) return GradeResult{Grade::exception, std::nullopt};

  auto fraction_of = [](const WheelObservation& w) {
    if (!w.waterline_px && !w.visible_mask_rows) return 0.0;
    return flood_fraction(w);
  };

  double fh = 0.0;
  if (cfg.fusion == WheelFusion::largest_wheel) {
    const WheelObservation* best = qualifying.front();
    for (const auto* w : qualifying) {
      if (w->height_px() > best->height_px()) best = w;
    }
    fh = fraction_of(*best);
  } else {
    for (const auto* w : qualifying) fh += fraction_of(*w);
    fh /= static_cast<double>(qualifying.size());
  }

  WaterLevelEstimate est;
  est.flood_fraction = fh;
  est.wheel_diameter_cm = cfg.effective_diameter();
  est.depth_cm = flood_depth_cm(fh, est.wheel_diameter_cm);
  est.grade = fh >= kGradeThreshold ? Grade::flooded_above_third : Grade::dry;
  est.compensation = compensation_flag(est.depth_cm);
  est.tire = cfg.tire;
  return GradeResult{est.grade, est};
}

void flood_fraction_batch(std::span<const double> box_top, std::span<const double> box_bottom,
                          std::span<const double> waterline, std::span<double> out) {
  simd::waterline_fraction(box_top, box_bottom, waterline, out);
}

void flood_depth_batch(std::span<const double> flood_fraction, double wheel_diameter_cm,
                       std::span<double> out) {
  simd::scale(flood_fraction, wheel_diameter_cm, out);
}

}  // namespace floodwatch
