#pragma once

#include <optional>
#include <utility>

#include "splatct/common.hpp"

namespace splatct {

/// Cone-beam scanner: source and flat-panel detector rotating about the
/// world z axis. All lengths in mm, angles in radians.
struct ScannerConfig {
  double l_so_mm = 8.0;  // source to rotation axis
  double l_sd_mm = 12.0; // source to detector plane
  Vec2 detector_size_mm{5.6, 5.6};
  Vec2i detector_res_px{128, 128};
  std::vector<double> angles_rad;
  Vec3 extent_min_mm{-1.0, -1.0, -1.0};
  Vec3 extent_max_mm{1.0, 1.0, 1.0};
  double near_clip_mm = 0.0; // <=0 selects the default of 1% of l_so_mm

  double near_clip() const {
    return near_clip_mm > 0.0 ? near_clip_mm : 0.01 * l_so_mm;
  }
  Vec3 extent_size_mm() const { return extent_max_mm - extent_min_mm; }

  /// Throws ConfigError if any invariant is violated (ordering of
  /// distances, positivity, extent centered on the rotation axis and
  /// contained in every view frustum).
  void validate() const;
};

std::vector<double> full_circle_angles(int n_views);
std::vector<double> arc_angles(int n_views, double start_rad, double end_rad);

/// Rigid world->scanner transform for one view. The scanner frame has the
/// X-ray source at its origin and +z pointing at the detector center.
struct ViewTransform {
  Mat3 rot;  // W
  Vec3 t;    // (0, 0, l_so)
  double theta_rad = 0.0;

  Vec3 world_to_scanner(const Vec3& p_world) const { return rot * p_world + t; }
  Vec3 source_position_world() const { return -rot.transpose() * t; }
};

ViewTransform view_transform(const ScannerConfig& config, double theta_rad);

/// Pinhole-style detector intrinsics in pixel units.
struct DetectorModel {
  double fx_px = 0.0;
  double fy_px = 0.0;
  double cx_px = 0.0;
  double cy_px = 0.0;
  int width_px = 0;
  int height_px = 0;
  double near_clip_mm = 0.0;
};

DetectorModel detector_model(const ScannerConfig& config);

std::pair<double, double> fov(const ScannerConfig& config);

/// Ray-space mapping: (x,y,z) in scanner coords -> (u_px, v_px, distance).
/// The third coordinate is the Euclidean distance from the source, so that
/// integrating a transformed kernel along it integrates over arclength.
Vec3 ray_space_point(const DetectorModel& det, const Vec3& p_scanner);

/// Jacobian of ray_space_point at p_scanner. Throws KernelBehindSource when
/// p_scanner.z() < near_clip.
Mat3 local_jacobian(const DetectorModel& det, const Vec3& p_scanner);

struct Ray {
  Vec3 origin_mm;
  Vec3 dir; // unit
  std::optional<std::pair<double, double>> bounds_mm; // carried, unused by the rasterizer
};

/// World-space ray from the source through the center of pixel (u,v).
Ray pixel_ray(const ScannerConfig& config, double theta_rad, int u, int v);

ScannerConfig load_scanner_config(const std::string& path);
void save_scanner_config(const ScannerConfig& config, const std::string& path);
ScannerConfig scanner_config_from_json_text(const std::string& text);
std::string scanner_config_to_json_text(const ScannerConfig& config);

} // namespace splatct
