#pragma once

#include <random>

#include "splatct/common.hpp"
#include "splatct/gaussian_cloud.hpp"

namespace splatct {

/// Regular voxel grid placement: the grid covers the box
/// [origin, origin + dims .* spacing), voxel (x,y,z) centered at
/// origin + (idx + 0.5) .* spacing.
struct GridSpec {
  Vec3i dims = Vec3i::Zero();
  Vec3 origin_mm = Vec3::Zero();
  Vec3 spacing_mm = Vec3::Ones();

  Vec3 voxel_center(int x, int y, int z) const {
    return origin_mm + (Vec3(x, y, z) + Vec3(0.5, 0.5, 0.5)).cwiseProduct(spacing_mm);
  }
  size_t voxel_count() const {
    return static_cast<size_t>(dims.x()) * dims.y() * dims.z();
  }
};

GridSpec grid_for_extent(const Vec3& extent_min_mm, const Vec3& extent_max_mm,
                         const Vec3i& dims);

/// Axis-aligned density grid, data stored x-fastest:
/// data[(z*Y + y)*X + x].
struct DensityVolume {
  Vec3i dims = Vec3i::Zero();
  Vec3 origin_mm = Vec3::Zero();
  Vec3 spacing_mm = Vec3::Ones();
  std::vector<double> data;

  DensityVolume() = default;
  explicit DensityVolume(const GridSpec& g)
      : dims(g.dims), origin_mm(g.origin_mm), spacing_mm(g.spacing_mm),
        data(g.voxel_count(), 0.0) {}

  GridSpec grid() const { return {dims, origin_mm, spacing_mm}; }
  size_t index(int x, int y, int z) const {
    return (static_cast<size_t>(z) * dims.y() + y) * dims.x() + x;
  }
  double& at(int x, int y, int z) { return data[index(x, y, z)]; }
  double at(int x, int y, int z) const { return data[index(x, y, z)]; }
};

/// Trilinear interpolation between voxel centers, clamped at the borders.
double sample_trilinear(const DensityVolume& vol, const Vec3& x_mm);

struct VoxelizeOptions {
  // 99% confidence radius for 3 dof; kernels whose radius-scaled bounding
  // box misses a tile are culled from it.
  double cull_mahalanobis = 3.3681993876652464; // sqrt(kChi2Q99Dof3)
};

/// Tile-binned density query of the kernel sum on a regular grid.
DensityVolume voxelize(const GaussianCloud& cloud, const GridSpec& grid,
                       const VoxelizeOptions& opts = {});

/// Analytic gradients of the culled kernel-sum w.r.t. all raw parameters;
/// adds into grads. dL_dV must match grid dims.
void voxelize_backward(const GaussianCloud& cloud, const GridSpec& grid,
                       const DensityVolume& dL_dV, CloudGrads& grads,
                       const VoxelizeOptions& opts = {});

/// D^3 sub-grid with the given spacing at a uniformly random position
/// inside the extent (used by the TV regularizer).
GridSpec random_subvolume_spec(const Vec3& extent_min_mm, const Vec3& extent_max_mm,
                               const Vec3& spacing_mm, int d, std::mt19937_64& rng);

} // namespace splatct
