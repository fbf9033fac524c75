#pragma once

// Water depth from a sedan wheel used as an in-scene ruler.
//
// Image rows grow downward. For a wheel box spanning rows [top, bottom]:
//   T_px  = bottom - top                 (whole wheel)
//   F_px  = bottom - waterline           (submerged part, waterline = water's upper bound)
//   T'_px = mask_bottom - mask_top       (visible, dry part from a segmentation mask)
//   F_h   = F_px / T_px = 1 - T'_px / T_px, clamped to [0, 1]
//   F_L   = F_h * D_wheel                (centimeters)

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace floodwatch {

class TireMarkingError : public std::invalid_argument {
 public:
  explicit TireMarkingError(const std::string& what) : std::invalid_argument(what) {}
};

class InsufficientObservation : public std::invalid_argument {
 public:
  explicit InsufficientObservation(const std::string& what) : std::invalid_argument(what) {}
};

struct TireSpec {
  double width_mm = 215.0;
  double aspect_pct = 60.0;
  double rim_in = 16.0;

  /// "W/AR{construction letter}D", e.g. "215/60R16". Also accepts the
  /// "215/60/R16" spelling.
  static TireSpec parse(std::string_view marking);
  bool is_valid() const;
  std::string marking() const;

  friend bool operator==(const TireSpec&, const TireSpec&) = default;
};

inline constexpr std::string_view kDefaultTireMarking = "215/60R16";

inline TireSpec default_tire() { return TireSpec{215.0, 60.0, 16.0}; }

/// rim_in * 2.54 + 2 * (width_mm / 10) * (aspect_pct / 100), in centimeters.
double wheel_diameter(const TireSpec& spec);

struct RowSpan {
  double top = 0.0;
  double bottom = 0.0;
  friend bool operator==(const RowSpan&, const RowSpan&) = default;
};

struct PixelBox {
  double left = 0.0;
  double top = 0.0;
  double right = 0.0;
  double bottom = 0.0;

  double height() const { return bottom - top; }
  bool contains(const PixelBox& inner) const {
    return inner.left >= left && inner.right <= right && inner.top >= top &&
           inner.bottom <= bottom;
  }
  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

struct WheelObservation {
  std::string tvid;
  PixelBox box;
  std::optional<double> waterline_px;
  std::optional<RowSpan> visible_mask_rows;

  double box_top_px() const { return box.top; }
  double box_bottom_px() const { return box.bottom; }
  double height_px() const { return box.height(); }

  friend bool operator==(const WheelObservation&, const WheelObservation&) = default;
};

/// Waterline form when present, otherwise mask form. Throws
/// InsufficientObservation when neither is present, std::invalid_argument
/// for a box with non-positive height.
double flood_fraction(const WheelObservation& obs);

double flood_depth(double flood_fraction, const TireSpec& spec);
double flood_depth_cm(double flood_fraction, double wheel_diameter_cm);

/// Strictly greater than 50 cm.
inline constexpr double kCompensationDepthCm = 50.0;
bool compensation_flag(double depth_cm);

inline constexpr double kGradeThreshold = 1.0 / 3.0;

enum class Grade { dry, flooded_above_third, exception };
std::string_view to_string(Grade g);
std::optional<Grade> grade_from_string(std::string_view s);

struct WaterLevelEstimate {
  double flood_fraction = 0.0;  // F_h
  double depth_cm = 0.0;        // F_L
  double wheel_diameter_cm = 0.0;
  Grade grade = Grade::dry;
  bool compensation = false;
  TireSpec tire;

  friend bool operator==(const WaterLevelEstimate&, const WaterLevelEstimate&) = default;
};

struct VehicleContext {
  PixelBox vehicle_box;
  std::vector<WheelObservation> wheels;

  friend bool operator==(const VehicleContext&, const VehicleContext&) = default;
};

enum class WheelFusion {
  largest_wheel,  // wheel with the largest pixel height drives F_h
  mean_depth,     // F_h averaged over all qualifying wheels
};

struct WaterLevelConfig {
  TireSpec tire = default_tire();
  /// Overrides the diameter derived from `tire` when set.
  std::optional<double> wheel_diameter_cm;
  /// Wheels must reach into this bottom fraction of the vehicle box.
  double lower_band_fraction = 0.4;
  WheelFusion fusion = WheelFusion::largest_wheel;

  double effective_diameter() const;
};

struct GradeResult {
  Grade grade = Grade::exception;
  std::optional<WaterLevelEstimate> estimate;

  friend bool operator==(const GradeResult&, const GradeResult&) = default;
};

/// Grades one vehicle. Wheels that do not reach into the lower band of the
/// vehicle box are ignored; none left means Grade::exception (wheels possibly
/// submerged). A qualifying wheel with neither a waterline nor a mask counts
/// as dry (F_h = 0).
GradeResult grade(const VehicleContext& ctx, const WaterLevelConfig& cfg = {});

/// Batch F_h for waterline observations (vectorised). Spans are parallel arrays.
void flood_fraction_batch(std::span<const double> box_top, std::span<const double> box_bottom,
                          std::span<const double> waterline, std::span<double> out);
/// Batch F_L = F_h * D_wheel.
void flood_depth_batch(std::span<const double> flood_fraction, double wheel_diameter_cm,
                       std::span<double> out);

}  // namespace floodwatch
