#include "splatct/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "splatct/io.hpp"

namespace splatct {

const std::vector<PhantomEllipsoid>& shepp_logan_ellipsoids_3d() {
  // Kak & Slaney 3D variant with the modified (high-contrast) intensities
  static const std::vector<PhantomEllipsoid> e = {
      {1.0, 0.690, 0.920, 0.810, 0.0, 0.0, 0.0, 0.0},
      {-0.8, 0.6624, 0.874, 0.780, 0.0, -0.0184, 0.0, 0.0},
      {-0.2, 0.110, 0.310, 0.220, 0.22, 0.0, 0.0, -18.0 * M_PI / 180.0},
      {-0.2, 0.160, 0.410, 0.280, -0.22, 0.0, 0.0, 18.0 * M_PI / 180.0},
      {0.1, 0.210, 0.250, 0.410, 0.0, 0.35, -0.15, 0.0},
      {0.1, 0.046, 0.046, 0.050, 0.0, 0.10, 0.25, 0.0},
      {0.1, 0.046, 0.046, 0.050, 0.0, -0.10, 0.25, 0.0},
      {0.1, 0.046, 0.023, 0.050, -0.08, -0.605, 0.0, 0.0},
      {0.1, 0.023, 0.023, 0.020, 0.0, -0.606, 0.0, 0.0},
      {0.1, 0.023, 0.046, 0.020, 0.06, -0.605, 0.0, 0.0},
  };
  return e;
}

double evaluate_ellipsoids(const std::vector<PhantomEllipsoid>& ellipsoids,
                           const Vec3& x) {
  double v = 0.0;
  for (const auto& e : ellipsoids) {
    const double dx = x.x() - e.x0;
    const double dy = x.y() - e.y0;
    const double dz = x.z() - e.z0;
    const double c = std::cos(e.phi_rad);
    const double s = std::sin(e.phi_rad);
    const double xr = c * dx + s * dy;
    const double yr = -s * dx + c * dy;
    const double q = (xr * xr) / (e.a * e.a) + (yr * yr) / (e.b * e.b) +
                     (dz * dz) / (e.c * e.c);
    if (q <= 1.0) v += e.intensity;
  }
  return v;
}

DensityVolume phantom_from_ellipsoids(const std::vector<PhantomEllipsoid>& ellipsoids,
                                      const Vec3i& dims, const Vec3& lo, const Vec3& hi) {
  if (dims.minCoeff() < 16)
    throw ConfigError("phantom: dims must be >= 16 per axis");
  DensityVolume vol(grid_for_extent(lo, hi, dims));
  const Vec3 center = 0.5 * (lo + hi);
  const Vec3 half = 0.5 * (hi - lo);
  const GridSpec grid = vol.grid();
#pragma omp parallel for schedule(static)
  for (int z = 0; z < dims.z(); ++z)
    for (int y = 0; y < dims.y(); ++y)
      for (int x = 0; x < dims.x(); ++x) {
        const Vec3 p = (grid.voxel_center(x, y, z) - center).cwiseQuotient(half);
        vol.at(x, y, z) = evaluate_ellipsoids(ellipsoids, p);
      }
  return vol;
}

DensityVolume phantom_shepp_logan_3d(const Vec3i& dims, const Vec3& lo, const Vec3& hi) {
  return phantom_from_ellipsoids(shepp_logan_ellipsoids_3d(), dims, lo, hi);
}

DensityVolume phantom_from_file(const std::string& path) {
  DensityVolume vol = read_volume(path);
  double mn = vol.data.empty() ? 0.0 : vol.data[0];
  double mx = mn;
  for (double v : vol.data) {
    if (!std::isfinite(v)) throw FileFormatError(path + ": non-finite density");
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  const double span = mx - mn;
  for (double& v : vol.data) v = span > 0.0 ? (v - mn) / span : 0.0;
  return vol;
}

namespace {

// slab intersection of a ray with the volume box; false when it misses
bool box_clip(const Vec3& o, const Vec3& d, const Vec3& lo, const Vec3& hi,
              double& t0, double& t1) {
  t0 = 0.0;
  t1 = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d[k]) < 1e-15) {
      if (o[k] < lo[k] || o[k] > hi[k]) return false;
      continue;
    }
    double a = (lo[k] - o[k]) / d[k];
    double b = (hi[k] - o[k]) / d[k];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  return t1 > t0;
}

} // namespace

Image project_volume(const DensityVolume& vol, const ScannerConfig& config,
                     double theta_rad, double step_mm) {
  if (!(step_mm > 0.0)) throw ConfigError("project_volume: step_mm must be > 0");
  const DetectorModel det = detector_model(config);
  Image img(det.width_px, det.height_px, 0.0);
  const Vec3 lo = vol.origin_mm;
  const Vec3 hi = vol.origin_mm + vol.spacing_mm.cwiseProduct(vol.dims.cast<double>());

#pragma omp parallel for schedule(static)
  for (int v = 0; v < det.height_px; ++v)
    for (int u = 0; u < det.width_px; ++u) {
      const Ray ray = pixel_ray(config, theta_rad, u, v);
      double t0, t1;
      if (!box_clip(ray.origin_mm, ray.dir, lo, hi, t0, t1)) continue;
      const int n = std::max(1, static_cast<int>(std::ceil((t1 - t0) / step_mm)));
      const double h = (t1 - t0) / n;
      double sum = 0.0;
      for (int i = 0; i < n; ++i) {
        const Vec3 x = ray.origin_mm + (t0 + (i + 0.5) * h) * ray.dir;
        sum += sample_trilinear(vol, x);
      }
      img.at(u, v) = sum * h;
    }
  return img;
}

std::mt19937_64 view_rng(uint64_t master_seed, int view_index) {
  // splitmix64 over (seed, view) for independent per-view streams
  uint64_t z = master_seed + 0x9e3779b97f4a7c15ULL * (static_cast<uint64_t>(view_index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z = z ^ (z >> 31);
  return std::mt19937_64(z);
}

Image add_noise(const Image& clean_log, const NoiseParams& noise, std::mt19937_64& rng) {
  if (!(noise.i0 > 0.0)) throw ConfigError("add_noise: i0 must be > 0");
  Image out(clean_log.width, clean_log.height, 0.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double log_i0 = std::log(noise.i0);
  for (size_t i = 0; i < clean_log.data.size(); ++i) {
    const double lambda = noise.i0 * std::exp(-clean_log.data[i]);
    std::poisson_distribution<long> poisson(lambda);
    double counts = static_cast<double>(poisson(rng));
    if (noise.gauss_sigma > 0.0) counts += noise.gauss_sigma * gauss(rng);
    counts = std::max(counts, 1.0);
    out.data[i] = log_i0 - std::log(counts);
  }
  return out;
}

double ProjectionSet::max_value() const {
  double mx = 0.0;
  for (const auto& img : images)
    for (double v : img.data) mx = std::max(mx, v);
  return mx;
}

ProjectionSet simulate_projections(const DensityVolume& phantom,
                                   const ScannerConfig& config, double step_mm,
                                   const NoiseParams& noise, bool apply_noise) {
  ProjectionSet ps;
  ps.scanner = config;
  ps.angles_rad = config.angles_rad;
  ps.noise = noise;
  ps.noisy = apply_noise;
  ps.images.resize(config.angles_rad.size());
  const int n = static_cast<int>(config.angles_rad.size());
  for (int i = 0; i < n; ++i) {
    Image clean = project_volume(phantom, config, config.angles_rad[i], step_mm);
    if (apply_noise) {
      auto rng = view_rng(noise.seed, i);
      ps.images[i] = add_noise(clean, noise, rng);
    } else {
      ps.images[i] = std::move(clean);
    }
  }
  return ps;
}

void save_projection_set(const ProjectionSet& ps, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["kind"] = "projection_set";
  manifest["version"] = 1;
  manifest["scanner"] = nlohmann::json::parse(scanner_config_to_json_text(ps.scanner));
  manifest["angles_rad"] = ps.angles_rad;
  manifest["noise"] = {{"i0", ps.noise.i0},
                       {"gauss_sigma", ps.noise.gauss_sigma},
                       {"seed", ps.noise.seed},
                       {"applied", ps.noisy}};
  std::vector<std::string> names;
  for (int i = 0; i < ps.n_views(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "view_%04d.img", i);
    names.emplace_back(buf);
    write_image(ps.images[i], (fs::path(dir) / buf).string(),
                {{"theta_rad", ps.angles_rad[i]}});
  }
  manifest["images"] = names;
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw DataError("cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

ProjectionSet load_projection_set(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw DataError("cannot open " + dir + "/manifest.json");
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FileFormatError(dir + "/manifest.json: " + e.what());
  }
  if (manifest.value("kind", "") != "projection_set")
    throw FileFormatError(dir + ": manifest is not a projection_set");
  ProjectionSet ps;
  try {
    ps.scanner = scanner_config_from_json_text(manifest.at("scanner").dump());
    ps.angles_rad = manifest.at("angles_rad").get<std::vector<double>>();
    ps.noise.i0 = manifest.at("noise").at("i0").get<double>();
    ps.noise.gauss_sigma = manifest.at("noise").at("gauss_sigma").get<double>();
    ps.noise.seed = manifest.at("noise").at("seed").get<uint64_t>();
    ps.noisy = manifest.at("noise").at("applied").get<bool>();
    for (const auto& name : manifest.at("images"))
      ps.images.push_back(read_image((fs::path(dir) / name.get<std::string>()).string()));
  } catch (const nlohmann::json::exception& e) {
    throw FileFormatError(dir + "/manifest.json: " + e.what());
  }
  if (ps.images.size() != ps.angles_rad.size())
    throw FileFormatError(dir + ": image count does not match angle count");
  for (const auto& img : ps.images)
    if (img.width != ps.scanner.detector_res_px.x() ||
        img.height != ps.scanner.detector_res_px.y())
      throw DimMismatch(dir + ": projection dims do not match the scanner config");
  return ps;
}

} // namespace splatct
