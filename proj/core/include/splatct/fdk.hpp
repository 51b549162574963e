#pragma once

#include <random>

#include "splatct/gaussian_cloud.hpp"
#include "splatct/simulator.hpp"
#include "splatct/voxelizer.hpp"

namespace splatct {

enum class RampWindow {
  kAuto,   // Hann below 100 views, plain Ram-Lak otherwise
  kRamLak,
  kHann,
};

/// Feldkamp reconstruction: cosine weighting, row-wise ramp filtering in
/// the frequency domain (zero-padded to a power of two), distance-weighted
/// backprojection over all views. Throws InsufficientViews for < 2 views.
DensityVolume fdk_reconstruct(const ProjectionSet& projections, const GridSpec& grid,
                              RampWindow window = RampWindow::kAuto);

struct InitParams {
  int count = 50000;          // M
  double density_threshold = 0.05; // tau
  double density_scale = 0.15;     // k
};

/// Samples an initial cloud from a reconstructed volume: kernel positions
/// drawn uniformly (without replacement, jittered within the voxel) from
/// voxels above the density threshold, isotropic scales from exact nearest
/// neighbor distances, densities k * trilinear volume density, identity
/// rotations. Throws TooFewOccupiedVoxels when fewer voxels pass the
/// threshold than requested kernels.
GaussianCloud sample_init_cloud(const DensityVolume& volume, const InitParams& params,
                                double s_min_mm, std::mt19937_64& rng);

/// Ablation fallback: uniform positions in the extent, small fixed scales,
/// tiny densities.
GaussianCloud random_init_cloud(const Vec3& extent_min_mm, const Vec3& extent_max_mm,
                                int count, double s_min_mm, std::mt19937_64& rng);

/// Exact all-pairs-free nearest neighbor distances via a uniform grid hash.
std::vector<double> nearest_neighbor_distances(const std::vector<Vec3>& points);

} // namespace splatct
