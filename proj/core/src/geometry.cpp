#include "splatct/geometry.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <omp.h>

#include <nlohmann/json.hpp>

namespace splatct {

namespace {
int g_threads = 0;
}

void set_num_threads(int n) {
  g_threads = n;
  omp_set_num_threads(n > 0 ? n : omp_get_num_procs());
}

int num_threads() {
  return g_threads > 0 ? g_threads : omp_get_max_threads();
}

void ScannerConfig::validate() const {
  if (!(l_so_mm > 0.0) || !(l_sd_mm > l_so_mm))
    throw ConfigError("scanner: require l_sd_mm > l_so_mm > 0");
  if (!(detector_size_mm.x() > 0.0) || !(detector_size_mm.y() > 0.0))
    throw ConfigError("scanner: detector_size_mm must be strictly positive");
  if (detector_res_px.x() <= 0 || detector_res_px.y() <= 0)
    throw ConfigError("scanner: detector_res_px must be strictly positive");
  if (angles_rad.empty())
    throw ConfigError("scanner: angles_rad is empty");
  for (double a : angles_rad)
    if (!std::isfinite(a)) throw ConfigError("scanner: non-finite view angle");

  const Vec3 c = 0.5 * (extent_min_mm + extent_max_mm);
  if (c.cwiseAbs().maxCoeff() > 1e-9 * extent_size_mm().maxCoeff())
    throw ConfigError("scanner: volume_extent must be centered on the rotation axis origin");
  if ((extent_size_mm().array() <= 0.0).any())
    throw ConfigError("scanner: volume_extent must have positive size");

  // Frustum containment for the rotating box: in xy the box sweeps a
  // cylinder of radius r_xy; the max ratio |x_c|/z_c over the sweep is
  // r/sqrt(l_so^2 - r^2).
  const Vec3 half = 0.5 * extent_size_mm();
  const double r_xy = std::hypot(half.x(), half.y());
  const double half_z = half.z();
  if (r_xy >= l_so_mm)
    throw ConfigError("scanner: volume_extent reaches the source orbit");
  if (l_so_mm - r_xy <= near_clip())
    throw ConfigError("scanner: volume_extent crosses the near clip plane");
  const auto [fov_x, fov_y] = fov(*this);
  const double tan_x = std::tan(0.5 * fov_x);
  const double tan_y = std::tan(0.5 * fov_y);
  if (r_xy / std::sqrt(l_so_mm * l_so_mm - r_xy * r_xy) > tan_x)
    throw ConfigError("scanner: volume_extent exceeds the horizontal frustum");
  if (half_z / (l_so_mm - r_xy) > tan_y)
    throw ConfigError("scanner: volume_extent exceeds the vertical frustum");
}

std::vector<double> full_circle_angles(int n_views) {
  std::vector<double> a(static_cast<size_t>(n_views));
  for (int i = 0; i < n_views; ++i) a[i] = 2.0 * M_PI * i / n_views;
  return a;
}

std::vector<double> arc_angles(int n_views, double start_rad, double end_rad) {
  std::vector<double> a(static_cast<size_t>(n_views));
  for (int i = 0; i < n_views; ++i)
    a[i] = start_rad + (end_rad - start_rad) * i / n_views;
  return a;
}

ViewTransform view_transform(const ScannerConfig& config, double theta_rad) {
  const double s = std::sin(theta_rad);
  const double c = std::cos(theta_rad);
  ViewTransform v;
  v.rot << -s, c, 0.0,
           0.0, 0.0, -1.0,
           -c, -s, 0.0;
  v.t = Vec3(0.0, 0.0, config.l_so_mm);
  v.theta_rad = theta_rad;
  return v;
}

DetectorModel detector_model(const ScannerConfig& config) {
  DetectorModel d;
  d.width_px = config.detector_res_px.x();
  d.height_px = config.detector_res_px.y();
  d.fx_px = config.l_sd_mm * d.width_px / config.detector_size_mm.x();
  d.fy_px = config.l_sd_mm * d.height_px / config.detector_size_mm.y();
  d.cx_px = 0.5 * d.width_px;
  d.cy_px = 0.5 * d.height_px;
  d.near_clip_mm = config.near_clip();
  return d;
}

std::pair<double, double> fov(const ScannerConfig& config) {
  return {2.0 * std::atan(config.detector_size_mm.x() / (2.0 * config.l_sd_mm)),
          2.0 * std::atan(config.detector_size_mm.y() / (2.0 * config.l_sd_mm))};
}

Vec3 ray_space_point(const DetectorModel& det, const Vec3& p) {
  return Vec3(det.fx_px * p.x() / p.z() + det.cx_px,
              det.fy_px * p.y() / p.z() + det.cy_px,
              p.norm());
}

Mat3 local_jacobian(const DetectorModel& det, const Vec3& p) {
  const double z = p.z();
  if (z < det.near_clip_mm)
    throw KernelBehindSource("kernel center behind the near clip plane");
  const double x = p.x();
  const double y = p.y();
  const double n = p.norm();
  Mat3 j;
  j << det.fx_px / z, 0.0, -det.fx_px * x / (z * z),
       0.0, det.fy_px / z, -det.fy_px * y / (z * z),
       x / n, y / n, z / n;
  return j;
}

Ray pixel_ray(const ScannerConfig& config, double theta_rad, int u, int v) {
  const DetectorModel det = detector_model(config);
  const double du = config.detector_size_mm.x() / det.width_px;
  const double dv = config.detector_size_mm.y() / det.height_px;
  // pixel centers at (u+0.5, v+0.5); detector u axis == scanner x, v == y
  const double xd = (u + 0.5) * du - 0.5 * config.detector_size_mm.x();
  const double yd = (v + 0.5) * dv - 0.5 * config.detector_size_mm.y();
  const Vec3 dir_scanner = Vec3(xd, yd, config.l_sd_mm).normalized();
  const ViewTransform view = view_transform(config, theta_rad);
  Ray r;
  r.origin_mm = view.source_position_world();
  r.dir = view.rot.transpose() * dir_scanner;
  return r;
}

namespace {

using nlohmann::json;

void require_keys(const json& j, std::initializer_list<const char*> required,
                  std::initializer_list<const char*> optional,
                  const std::string& where) {
  for (const char* k : required)
    if (!j.contains(k))
      throw ConfigError(where + ": missing key '" + k + "'");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : required) known |= (it.key() == k);
    for (const char* k : optional) known |= (it.key() == k);
    if (!known)
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

Vec3 vec3_of(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3)
    throw ConfigError(where + ": expected an array of 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

} // namespace

ScannerConfig scanner_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scanner config: invalid JSON: ") + e.what());
  }
  require_keys(j,
               {"l_so_mm", "l_sd_mm", "detector_size_mm", "detector_res_px",
                "angles", "volume_extent_mm"},
               {"near_clip_mm"}, "scanner config");
  ScannerConfig c;
  try {
    c.l_so_mm = j["l_so_mm"].get<double>();
    c.l_sd_mm = j["l_sd_mm"].get<double>();
    c.detector_size_mm = Vec2(j["detector_size_mm"][0].get<double>(),
                              j["detector_size_mm"][1].get<double>());
    c.detector_res_px = Vec2i(j["detector_res_px"][0].get<int>(),
                              j["detector_res_px"][1].get<int>());
    const json& ext = j["volume_extent_mm"];
    require_keys(ext, {"min", "max"}, {}, "scanner config: volume_extent_mm");
    c.extent_min_mm = vec3_of(ext["min"], "volume_extent_mm.min");
    c.extent_max_mm = vec3_of(ext["max"], "volume_extent_mm.max");
    if (j.contains("near_clip_mm")) c.near_clip_mm = j["near_clip_mm"].get<double>();

    const json& ang = j["angles"];
    require_keys(ang, {"mode"}, {"n_views", "start_rad", "end_rad", "angles_rad"},
                 "scanner config: angles");
    const std::string mode = ang["mode"].get<std::string>();
    if (mode == "full_circle") {
      c.angles_rad = full_circle_angles(ang.at("n_views").get<int>());
    } else if (mode == "arc") {
      c.angles_rad = arc_angles(ang.at("n_views").get<int>(),
                                ang.at("start_rad").get<double>(),
                                ang.at("end_rad").get<double>());
    } else if (mode == "explicit") {
      c.angles_rad = ang.at("angles_rad").get<std::vector<double>>();
    } else {
      throw ConfigError("scanner config: angles.mode must be full_circle, arc or explicit");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scanner config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string scanner_config_to_json_text(const ScannerConfig& c) {
  json j;
  j["l_so_mm"] = c.l_so_mm;
  j["l_sd_mm"] = c.l_sd_mm;
  j["detector_size_mm"] = {c.detector_size_mm.x(), c.detector_size_mm.y()};
  j["detector_res_px"] = {c.detector_res_px.x(), c.detector_res_px.y()};
  j["angles"] = {{"mode", "explicit"}, {"angles_rad", c.angles_rad}};
  j["volume_extent_mm"] = {
      {"min", {c.extent_min_mm.x(), c.extent_min_mm.y(), c.extent_min_mm.z()}},
      {"max", {c.extent_max_mm.x(), c.extent_max_mm.y(), c.extent_max_mm.z()}}};
  j["near_clip_mm"] = c.near_clip();
  return j.dump(2) + "\n";
}

ScannerConfig load_scanner_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scanner config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return scanner_config_from_json_text(ss.str());
}

void save_scanner_config(const ScannerConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write scanner config: " + path);
  out << scanner_config_to_json_text(config);
}

} // namespace splatct
