#include "splatct/voxelizer.hpp"

#include <algorithm>
#include <cmath>

namespace splatct {

GridSpec grid_for_extent(const Vec3& lo, const Vec3& hi, const Vec3i& dims) {
  GridSpec g;
  g.dims = dims;
  g.origin_mm = lo;
  g.spacing_mm = (hi - lo).cwiseQuotient(dims.cast<double>());
  return g;
}

double sample_trilinear(const DensityVolume& vol, const Vec3& x) {
  Vec3 g = (x - vol.origin_mm).cwiseQuotient(vol.spacing_mm) - Vec3(0.5, 0.5, 0.5);
  int ix[3], f1[3];
  double w[3];
  for (int k = 0; k < 3; ++k) {
    const double c = std::clamp(g[k], 0.0, static_cast<double>(vol.dims[k] - 1));
    ix[k] = static_cast<int>(std::floor(c));
    ix[k] = std::min(ix[k], vol.dims[k] - 1);
    f1[k] = std::min(ix[k] + 1, vol.dims[k] - 1);
    w[k] = c - ix[k];
  }
  double out = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double weight = (dx ? w[0] : 1 - w[0]) * (dy ? w[1] : 1 - w[1]) *
                              (dz ? w[2] : 1 - w[2]);
        out += weight * vol.at(dx ? f1[0] : ix[0], dy ? f1[1] : ix[1],
                               dz ? f1[2] : ix[2]);
      }
  return out;
}

namespace {

struct TileBins {
  Vec3i tiles = Vec3i::Zero();
  std::vector<std::vector<int>> kernels; // per tile, kernel indices in order

  int tile_index(int tx, int ty, int tz) const {
    return (tz * tiles.y() + ty) * tiles.x() + tx;
  }
};

// Conservative cull: axis-aligned bounding box of the radius-sigma
// ellipsoid against tile boxes; errs toward inclusion.
TileBins bin_kernels(const GaussianCloud& cloud, const GridSpec& grid,
                     double radius) {
  TileBins bins;
  for (int k = 0; k < 3; ++k)
    bins.tiles[k] = (grid.dims[k] + kVolumeTileVox - 1) / kVolumeTileVox;
  bins.kernels.resize(static_cast<size_t>(bins.tiles.x()) * bins.tiles.y() *
                      bins.tiles.z());

  for (int i = 0; i < cloud.size(); ++i) {
    const Mat3 sigma = cloud.covariance_at(i);
    const Vec3 p = cloud.position(i);
    int lo[3], hi[3];
    bool empty = false;
    for (int k = 0; k < 3; ++k) {
      const double r = radius * std::sqrt(std::max(sigma(k, k), 0.0));
      // voxel index range overlapped by [p-r, p+r]
      const double a = (p[k] - r - grid.origin_mm[k]) / grid.spacing_mm[k];
      const double b = (p[k] + r - grid.origin_mm[k]) / grid.spacing_mm[k];
      int v0 = static_cast<int>(std::floor(a));
      int v1 = static_cast<int>(std::floor(b));
      v0 = std::max(v0, 0);
      v1 = std::min(v1, grid.dims[k] - 1);
      if (v0 > v1) {
        empty = true;
        break;
      }
      lo[k] = v0 / kVolumeTileVox;
      hi[k] = v1 / kVolumeTileVox;
    }
    if (empty) continue;
    for (int tz = lo[2]; tz <= hi[2]; ++tz)
      for (int ty = lo[1]; ty <= hi[1]; ++ty)
        for (int tx = lo[0]; tx <= hi[0]; ++tx)
          bins.kernels[bins.tile_index(tx, ty, tz)].push_back(i);
  }
  return bins;
}

struct KernelEval {
  Vec3 p;
  Mat3 q; // inverse covariance
  double rho;
};

std::vector<KernelEval> precompute(const GaussianCloud& cloud) {
  std::vector<KernelEval> ev(cloud.size());
  for (int i = 0; i < cloud.size(); ++i) {
    ev[i].p = cloud.position(i);
    ev[i].q = cloud.covariance_at(i).inverse();
    ev[i].rho = cloud.rho(i);
  }
  return ev;
}

} // namespace

DensityVolume voxelize(const GaussianCloud& cloud, const GridSpec& grid,
                       const VoxelizeOptions& opts) {
  DensityVolume vol(grid);
  const TileBins bins = bin_kernels(cloud, grid, opts.cull_mahalanobis);
  const auto ev = precompute(cloud);
  const int n_tiles = static_cast<int>(bins.kernels.size());

#pragma omp parallel for schedule(static)
  for (int t = 0; t < n_tiles; ++t) {
    const auto& list = bins.kernels[t];
    if (list.empty()) continue;
    const int tx = t % bins.tiles.x();
    const int ty = (t / bins.tiles.x()) % bins.tiles.y();
    const int tz = t / (bins.tiles.x() * bins.tiles.y());
    const int x0 = tx * kVolumeTileVox, x1 = std::min(x0 + kVolumeTileVox, grid.dims.x());
    const int y0 = ty * kVolumeTileVox, y1 = std::min(y0 + kVolumeTileVox, grid.dims.y());
    const int z0 = tz * kVolumeTileVox, z1 = std::min(z0 + kVolumeTileVox, grid.dims.z());
    for (int z = z0; z < z1; ++z)
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          const Vec3 c = grid.voxel_center(x, y, z);
          double sum = 0.0;
          for (int i : list) {
            const Vec3 d = c - ev[i].p;
            sum += ev[i].rho * std::exp(-0.5 * d.dot(ev[i].q * d));
          }
          vol.at(x, y, z) += sum;
        }
  }
  return vol;
}

void voxelize_backward(const GaussianCloud& cloud, const GridSpec& grid,
                       const DensityVolume& dL_dV, CloudGrads& grads,
                       const VoxelizeOptions& opts) {
  if (dL_dV.dims != grid.dims)
    throw DimMismatch("voxelize_backward: gradient volume dims mismatch");
  const TileBins bins = bin_kernels(cloud, grid, opts.cull_mahalanobis);
  const auto ev = precompute(cloud);
  const int n_tiles = static_cast<int>(bins.kernels.size());

  // Per-(tile,kernel) sufficient statistics:
  //   s0 = sum g*E, s1 = sum g*E*d (3), s2 = sum g*E*d d^T (sym, 6)
  struct Stat {
    double s0 = 0.0;
    Vec3 s1 = Vec3::Zero();
    double s2[6] = {0, 0, 0, 0, 0, 0}; // xx yy zz xy xz yz
  };
  std::vector<std::vector<Stat>> scratch(n_tiles);

#pragma omp parallel for schedule(static)
  for (int t = 0; t < n_tiles; ++t) {
    const auto& list = bins.kernels[t];
    if (list.empty()) continue;
    scratch[t].resize(list.size());
    const int tx = t % bins.tiles.x();
    const int ty = (t / bins.tiles.x()) % bins.tiles.y();
    const int tz = t / (bins.tiles.x() * bins.tiles.y());
    const int x0 = tx * kVolumeTileVox, x1 = std::min(x0 + kVolumeTileVox, grid.dims.x());
    const int y0 = ty * kVolumeTileVox, y1 = std::min(y0 + kVolumeTileVox, grid.dims.y());
    const int z0 = tz * kVolumeTileVox, z1 = std::min(z0 + kVolumeTileVox, grid.dims.z());
    for (int z = z0; z < z1; ++z)
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          const double g = dL_dV.at(x, y, z);
          if (g == 0.0) continue;
          const Vec3 c = grid.voxel_center(x, y, z);
          for (size_t li = 0; li < list.size(); ++li) {
            const KernelEval& k = ev[list[li]];
            const Vec3 d = c - k.p;
            const double ge = g * std::exp(-0.5 * d.dot(k.q * d));
            Stat& s = scratch[t][li];
            s.s0 += ge;
            s.s1 += ge * d;
            s.s2[0] += ge * d.x() * d.x();
            s.s2[1] += ge * d.y() * d.y();
            s.s2[2] += ge * d.z() * d.z();
            s.s2[3] += ge * d.x() * d.y();
            s.s2[4] += ge * d.x() * d.z();
            s.s2[5] += ge * d.y() * d.z();
          }
        }
  }

  // fixed-order reduction over tiles, then the per-kernel chain rule
  std::vector<Stat> total(cloud.size());
  std::vector<char> touched(cloud.size(), 0);
  for (int t = 0; t < n_tiles; ++t) {
    const auto& list = bins.kernels[t];
    for (size_t li = 0; li < list.size(); ++li) {
      const Stat& s = scratch[t][li];
      Stat& acc = total[list[li]];
      acc.s0 += s.s0;
      acc.s1 += s.s1;
      for (int k = 0; k < 6; ++k) acc.s2[k] += s.s2[k];
      touched[list[li]] = 1;
    }
  }

  for (int i = 0; i < cloud.size(); ++i) {
    if (!touched[i]) continue;
    const KernelEval& k = ev[i];
    const Stat& s = total[i];
    Mat3 s2;
    s2 << s.s2[0], s.s2[3], s.s2[4],
          s.s2[3], s.s2[1], s.s2[5],
          s.s2[4], s.s2[5], s.s2[2];

    // value = rho * exp(-1/2 d^T Q d), d = c - p
    grads.rho_raw[i] += s.s0 * act_density_grad(cloud.rho_raw[i]);
    const Vec3 dp = k.rho * (k.q * s.s1);
    for (int c = 0; c < 3; ++c) grads.pos[3 * i + c] += dp[c];
    const Mat3 g_q = -0.5 * k.rho * s2;
    const Mat3 g_sigma = -k.q * g_q * k.q;
    accumulate_covariance_param_grads(cloud, i, g_sigma, grads);
  }
}

GridSpec random_subvolume_spec(const Vec3& lo, const Vec3& hi, const Vec3& spacing,
                               int d, std::mt19937_64& rng) {
  GridSpec g;
  g.dims = Vec3i(d, d, d);
  g.spacing_mm = spacing;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int k = 0; k < 3; ++k) {
    const double span = (hi[k] - lo[k]) - d * spacing[k];
    const double u = uni(rng);
    g.origin_mm[k] = span > 0.0 ? lo[k] + u * span
                                : 0.5 * (lo[k] + hi[k]) - 0.5 * d * spacing[k];
  }
  return g;
}

} // namespace splatct
