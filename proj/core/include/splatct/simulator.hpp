#pragma once

#include <random>

#include "splatct/geometry.hpp"
#include "splatct/voxelizer.hpp"

namespace splatct {

/// One ellipsoid of an analytic phantom: additive intensity inside the
/// ellipsoid with semi-axes (a,b,c), centered at (x0,y0,z0) in normalized
/// [-1,1] coordinates, rotated by phi about the z axis.
struct PhantomEllipsoid {
  double intensity;
  double a, b, c;
  double x0, y0, z0;
  double phi_rad;
};

const std::vector<PhantomEllipsoid>& shepp_logan_ellipsoids_3d();

double evaluate_ellipsoids(const std::vector<PhantomEllipsoid>& ellipsoids,
                           const Vec3& x_normalized);

/// Standard 3D Shepp-Logan phantom sampled at voxel centers; densities in
/// [0,1] by construction.
DensityVolume phantom_shepp_logan_3d(const Vec3i& dims, const Vec3& extent_min_mm,
                                     const Vec3& extent_max_mm);

DensityVolume phantom_from_ellipsoids(const std::vector<PhantomEllipsoid>& ellipsoids,
                                      const Vec3i& dims, const Vec3& extent_min_mm,
                                      const Vec3& extent_max_mm);

/// Loads a volume file and min-max normalizes densities to [0,1].
DensityVolume phantom_from_file(const std::string& path);

/// Slow exact forward projector: composite-midpoint quadrature of the
/// trilinearly interpolated volume along each pixel ray, bounded by the
/// volume box. This is the oracle the rasterizer is validated against.
Image project_volume(const DensityVolume& vol, const ScannerConfig& config,
                     double theta_rad, double step_mm);

struct NoiseParams {
  double i0 = 1e5;          // photons per ray without attenuation
  double gauss_sigma = 10.0; // detector readout noise, count domain
  uint64_t seed = 0;
};

/// Poisson photon noise on expected counts, then additive Gaussian readout
/// noise, clamp to >= 1 count, back to the log domain.
Image add_noise(const Image& clean_log, const NoiseParams& noise, std::mt19937_64& rng);

/// Deterministic per-view RNG stream derived from a master seed.
std::mt19937_64 view_rng(uint64_t master_seed, int view_index);

/// A stack of log-domain projections with pose and noise metadata.
struct ProjectionSet {
  std::vector<Image> images;
  std::vector<double> angles_rad;
  ScannerConfig scanner;
  NoiseParams noise;
  bool noisy = false;

  int n_views() const { return static_cast<int>(images.size()); }
  double max_value() const;
};

/// Renders clean log-domain projections of a volume for every configured
/// angle (quadrature projector), optionally applying the noise model with
/// per-view streams of noise.seed.
ProjectionSet simulate_projections(const DensityVolume& phantom,
                                   const ScannerConfig& config, double step_mm,
                                   const NoiseParams& noise, bool apply_noise);

/// Directory layout: manifest.json plus one image container per view.
void save_projection_set(const ProjectionSet& ps, const std::string& dir);
ProjectionSet load_projection_set(const std::string& dir);

} // namespace splatct
