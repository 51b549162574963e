#include "splatct/fdk.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <unsupported/Eigen/FFT>

namespace splatct {

namespace {

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// frequency response of the band-limited ramp (Ram-Lak), built from the
// exact discrete spatial kernel to avoid the DC bias of sampling |f|
std::vector<double> ramp_response(size_t padded, double spacing, bool hann) {
  std::vector<double> h(padded, 0.0);
  h[0] = 1.0 / (4.0 * spacing * spacing);
  for (size_t n = 1; n <= padded / 2; ++n) {
    if (n % 2 == 1) {
      const double v = -1.0 / (M_PI * M_PI * n * n * spacing * spacing);
      h[n] = v;
      h[padded - n] = v;
    }
  }
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, h);
  std::vector<double> response(padded);
  for (size_t k = 0; k < padded; ++k) {
    double r = spec[k].real();
    if (hann) r *= 0.5 * (1.0 + std::cos(2.0 * M_PI * static_cast<double>(k) / padded));
    response[k] = r;
  }
  return response;
}

double median_gap(std::vector<double> angles) {
  std::sort(angles.begin(), angles.end());
  std::vector<double> gaps;
  for (size_t i = 1; i < angles.size(); ++i) gaps.push_back(angles[i] - angles[i - 1]);
  std::sort(gaps.begin(), gaps.end());
  return gaps[gaps.size() / 2];
}

} // namespace

DensityVolume fdk_reconstruct(const ProjectionSet& ps, const GridSpec& grid,
                              RampWindow window) {
  const int n_views = ps.n_views();
  if (n_views < 2) throw InsufficientViews("fdk: need at least 2 views");
  const ScannerConfig& cfg = ps.scanner;
  const int w = cfg.detector_res_px.x();
  const int h = cfg.detector_res_px.y();
  const double du = cfg.detector_size_mm.x() / w;
  const double dv = cfg.detector_size_mm.y() / h;
  const double magnification = cfg.l_so_mm / cfg.l_sd_mm;
  const double da = du * magnification; // virtual-detector row spacing

  const bool hann = window == RampWindow::kHann ||
                    (window == RampWindow::kAuto && n_views < 100);
  const size_t padded = next_pow2(static_cast<size_t>(2 * w));
  const std::vector<double> response = ramp_response(padded, da, hann);

  // cosine weighting + row-wise ramp filtering
  std::vector<Image> filtered(n_views);
#pragma omp parallel for schedule(static)
  for (int view = 0; view < n_views; ++view) {
    Eigen::FFT<double> fft;
    Image q(w, h, 0.0);
    std::vector<double> row(padded, 0.0);
    std::vector<std::complex<double>> spec;
    for (int v = 0; v < h; ++v) {
      const double yd = (v + 0.5) * dv - 0.5 * cfg.detector_size_mm.y();
      for (int u = 0; u < w; ++u) {
        const double xd = (u + 0.5) * du - 0.5 * cfg.detector_size_mm.x();
        const double cosw = cfg.l_sd_mm /
            std::sqrt(cfg.l_sd_mm * cfg.l_sd_mm + xd * xd + yd * yd);
        row[u] = ps.images[view].at(u, v) * cosw;
      }
      std::fill(row.begin() + w, row.end(), 0.0);
      fft.fwd(spec, row);
      for (size_t k = 0; k < padded; ++k) spec[k] *= response[k];
      std::vector<double> back;
      fft.inv(back, spec);
      for (int u = 0; u < w; ++u) q.at(u, v) = back[u] * da;
    }
    filtered[view] = std::move(q);
  }

  // distance-weighted backprojection
  DensityVolume vol(grid);
  const double dtheta = median_gap(ps.angles_rad);
  std::vector<ViewTransform> views;
  views.reserve(n_views);
  for (int i = 0; i < n_views; ++i) views.push_back(view_transform(cfg, ps.angles_rad[i]));

  const int nx = grid.dims.x(), ny = grid.dims.y(), nz = grid.dims.z();
#pragma omp parallel for schedule(static)
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        const Vec3 p = grid.voxel_center(x, y, z);
        double acc = 0.0;
        for (int i = 0; i < n_views; ++i) {
          const Vec3 pc = views[i].world_to_scanner(p);
          if (pc.z() <= 0.0) continue;
          const double xd = pc.x() * cfg.l_sd_mm / pc.z();
          const double yd = pc.y() * cfg.l_sd_mm / pc.z();
          const double uc = (xd + 0.5 * cfg.detector_size_mm.x()) / du - 0.5;
          const double vc = (yd + 0.5 * cfg.detector_size_mm.y()) / dv - 0.5;
          if (uc < 0.0 || uc > w - 1 || vc < 0.0 || vc > h - 1) continue;
          const int u0 = std::min(static_cast<int>(uc), w - 2);
          const int v0 = std::min(static_cast<int>(vc), h - 2);
          const double fu = uc - u0;
          const double fv = vc - v0;
          const Image& q = filtered[i];
          const double val = (1 - fu) * (1 - fv) * q.at(u0, v0) +
                             fu * (1 - fv) * q.at(u0 + 1, v0) +
                             (1 - fu) * fv * q.at(u0, v0 + 1) +
                             fu * fv * q.at(u0 + 1, v0 + 1);
          const double ratio = cfg.l_so_mm / pc.z();
          acc += ratio * ratio * val;
        }
        vol.at(x, y, z) = 0.5 * dtheta * acc;
      }
  return vol;
}

std::vector<double> nearest_neighbor_distances(const std::vector<Vec3>& points) {
  const size_t n = points.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;

  if (n <= 256) {
    for (size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (size_t j = 0; j < n; ++j)
        if (j != i) best = std::min(best, (points[i] - points[j]).squaredNorm());
      out[i] = std::sqrt(best);
    }
    return out;
  }

  Vec3 lo = points[0], hi = points[0];
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 span = (hi - lo).cwiseMax(1e-12);
  const double cell = std::max(std::cbrt(span.prod() / static_cast<double>(n)), 1e-12);
  Vec3i dims;
  for (int k = 0; k < 3; ++k)
    dims[k] = std::max(1, static_cast<int>(std::ceil(span[k] / cell)));

  auto cell_of = [&](const Vec3& p) {
    Vec3i c;
    for (int k = 0; k < 3; ++k)
      c[k] = std::clamp(static_cast<int>((p[k] - lo[k]) / cell), 0, dims[k] - 1);
    return c;
  };
  auto key_of = [&](const Vec3i& c) {
    return (static_cast<int64_t>(c.z()) * dims.y() + c.y()) * dims.x() + c.x();
  };
  std::unordered_map<int64_t, std::vector<int>> buckets;
  for (size_t i = 0; i < n; ++i)
    buckets[key_of(cell_of(points[i]))].push_back(static_cast<int>(i));

  const int max_ring = dims.maxCoeff();
#pragma omp parallel for schedule(static)
  for (int i = 0; i < static_cast<int>(n); ++i) {
    const Vec3i c0 = cell_of(points[i]);
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r <= max_ring; ++r) {
      // a point in a cell at Chebyshev cell-distance r is >= (r-1)*cell away
      const double reach = static_cast<double>(r - 1) * cell;
      if (r >= 1 && best <= reach * reach) break;
      for (int dz = -r; dz <= r; ++dz)
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
            const Vec3i c = c0 + Vec3i(dx, dy, dz);
            if ((c.array() < 0).any() || (c.array() >= dims.array()).any()) continue;
            auto it = buckets.find(key_of(c));
            if (it == buckets.end()) continue;
            for (int j : it->second) {
              if (j == i) continue;
              best = std::min(best, (points[i] - points[j]).squaredNorm());
            }
          }
    }
    out[i] = std::sqrt(best);
  }
  return out;
}

GaussianCloud sample_init_cloud(const DensityVolume& volume, const InitParams& params,
                                double s_min_mm, std::mt19937_64& rng) {
  std::vector<int64_t> occupied;
  for (size_t i = 0; i < volume.data.size(); ++i)
    if (volume.data[i] > params.density_threshold)
      occupied.push_back(static_cast<int64_t>(i));
  if (static_cast<int>(occupied.size()) < params.count)
    throw TooFewOccupiedVoxels("init: only " + std::to_string(occupied.size()) +
                               " voxels above the density threshold, need " +
                               std::to_string(params.count));

  // partial Fisher-Yates for M distinct voxels
  for (int i = 0; i < params.count; ++i) {
    std::uniform_int_distribution<size_t> pick(i, occupied.size() - 1);
    std::swap(occupied[i], occupied[pick(rng)]);
  }

  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  std::vector<Vec3> positions(params.count);
  const GridSpec grid = volume.grid();
  for (int i = 0; i < params.count; ++i) {
    const int64_t idx = occupied[i];
    const int x = static_cast<int>(idx % volume.dims.x());
    const int y = static_cast<int>((idx / volume.dims.x()) % volume.dims.y());
    const int z = static_cast<int>(idx / (static_cast<int64_t>(volume.dims.x()) * volume.dims.y()));
    Vec3 p = grid.voxel_center(x, y, z);
    for (int k = 0; k < 3; ++k) p[k] += jitter(rng) * volume.spacing_mm[k];
    positions[i] = p;
  }

  const std::vector<double> nn = nearest_neighbor_distances(positions);

  GaussianCloud cloud(s_min_mm);
  for (int i = 0; i < params.count; ++i) {
    RadiativeGaussian g;
    g.position_mm = positions[i];
    const double s = std::max(nn[i], s_min_mm * (1.0 + 1e-6));
    g.scale_mm = Vec3(s, s, s);
    const double rho = params.density_scale * sample_trilinear(volume, positions[i]);
    g.rho = std::max(rho, 1e-6);
    g.rotation = Vec4(1.0, 0.0, 0.0, 0.0);
    cloud.add_kernel(g);
  }
  return cloud;
}

GaussianCloud random_init_cloud(const Vec3& lo, const Vec3& hi, int count,
                                double s_min_mm, std::mt19937_64& rng) {
  GaussianCloud cloud(s_min_mm);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double small_scale = 5e-3 * (hi - lo).maxCoeff();
  for (int i = 0; i < count; ++i) {
    RadiativeGaussian g;
    for (int k = 0; k < 3; ++k) g.position_mm[k] = lo[k] + uni(rng) * (hi[k] - lo[k]);
    g.scale_mm = Vec3(small_scale, small_scale, small_scale);
    g.rho = 1e-3;
    g.rotation = Vec4(1.0, 0.0, 0.0, 0.0);
    cloud.add_kernel(g);
  }
  return cloud;
}

} // namespace splatct
