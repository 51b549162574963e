#pragma once

// Shared test oracles: finite differences, analytic ray marching, a
// brute-force SSIM, and scene builders. Everything here is independent of
// the tiled rasterizer/voxelizer code paths it checks.

#include <cmath>
#include <functional>
#include <random>

#include "splatct/gaussian_cloud.hpp"
#include "splatct/geometry.hpp"
#include "splatct/rasterizer.hpp"
#include "splatct/voxelizer.hpp"

namespace splatct::testing {

inline ScannerConfig test_scanner(int n_views = 8, int res = 128) {
  ScannerConfig c;
  c.l_so_mm = 8.0;
  c.l_sd_mm = 12.0;
  c.detector_size_mm = Vec2(5.6, 5.6);
  c.detector_res_px = Vec2i(res, res);
  c.extent_min_mm = Vec3(-1.0, -1.0, -1.0);
  c.extent_max_mm = Vec3(1.0, 1.0, 1.0);
  c.angles_rad = full_circle_angles(n_views);
  return c;
}

inline GaussianCloud random_cloud(std::mt19937_64& rng, int count,
                                  double pos_radius = 0.35,
                                  double scale_min = 0.05, double scale_max = 0.2,
                                  double s_min = 2e-4) {
  std::uniform_real_distribution<double> upos(-pos_radius, pos_radius);
  std::uniform_real_distribution<double> uscale(scale_min, scale_max);
  std::uniform_real_distribution<double> urho(0.2, 1.5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  GaussianCloud cloud(s_min);
  for (int i = 0; i < count; ++i) {
    RadiativeGaussian g;
    g.rho = urho(rng);
    g.position_mm = Vec3(upos(rng), upos(rng), upos(rng));
    g.scale_mm = Vec3(uscale(rng), uscale(rng), uscale(rng));
    g.rotation = Vec4(gauss(rng), gauss(rng), gauss(rng), gauss(rng)).normalized();
    cloud.add_kernel(g);
  }
  return cloud;
}

/// Integrates density_at along a ray with composite midpoint quadrature;
/// brackets the integration so every kernel's 6-sigma support is covered.
inline double ray_march_density(const GaussianCloud& cloud, const Vec3& origin,
                                const Vec3& dir, double step) {
  double t_lo = std::numeric_limits<double>::infinity();
  double t_hi = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < cloud.size(); ++i) {
    const double t_center = (cloud.position(i) - origin).dot(dir);
    const double pad = 8.0 * cloud.scale(i).maxCoeff();
    t_lo = std::min(t_lo, t_center - pad);
    t_hi = std::max(t_hi, t_center + pad);
  }
  if (!(t_hi > t_lo)) return 0.0;
  const int n = static_cast<int>(std::ceil((t_hi - t_lo) / step));
  const double h = (t_hi - t_lo) / n;
  double sum = 0.0;
  for (int i = 0; i < n; ++i)
    sum += density_at(cloud, origin + (t_lo + (i + 0.5) * h) * dir);
  return sum * h;
}

/// max relative mismatch between analytic and central finite-difference
/// gradients of `loss` over every raw parameter of the cloud. `analytic`
/// must be laid out like CloudGrads.
struct GradCheckResult {
  double max_err = 0.0;
  int checked = 0;
};

inline GradCheckResult finite_difference_check(
    GaussianCloud& cloud, const CloudGrads& analytic,
    const std::function<double(const GaussianCloud&)>& loss, double step = 1e-5) {
  double grad_scale = 1e-12;
  auto scan = [&](const std::vector<double>& g) {
    for (double v : g) grad_scale = std::max(grad_scale, std::abs(v));
  };
  scan(analytic.rho_raw);
  scan(analytic.pos);
  scan(analytic.scale_raw);
  scan(analytic.rot);

  GradCheckResult res;
  auto check_array = [&](std::vector<double>& params, const std::vector<double>& grads) {
    for (size_t i = 0; i < params.size(); ++i) {
      const double saved = params[i];
      const double h = step * std::max(1.0, std::abs(saved));
      params[i] = saved + h;
      const double up = loss(cloud);
      params[i] = saved - h;
      const double down = loss(cloud);
      params[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double a = grads[i];
      const double denom = std::max({std::abs(a), std::abs(fd), 1e-4 * grad_scale});
      res.max_err = std::max(res.max_err, std::abs(a - fd) / denom);
      ++res.checked;
    }
  };
  check_array(cloud.rho_raw, analytic.rho_raw);
  check_array(cloud.pos, analytic.pos);
  check_array(cloud.scale_raw, analytic.scale_raw);
  check_array(cloud.rot, analytic.rot);
  return res;
}

inline Image random_image(std::mt19937_64& rng, int w, int h, double lo = 0.0,
                          double hi = 1.0) {
  std::uniform_real_distribution<double> uni(lo, hi);
  Image img(w, h, 0.0);
  for (auto& v : img.data) v = uni(rng);
  return img;
}

/// Direct windowed SSIM, quadratic loops, no shared code with the library
/// implementation.
inline double brute_force_ssim(const Image& a, const Image& b) {
  const int win = 11;
  const double sigma = 1.5;
  const double c1 = 1e-4, c2 = 9e-4;
  std::vector<double> w(static_cast<size_t>(win) * win);
  double wsum = 0.0;
  for (int j = 0; j < win; ++j)
    for (int i = 0; i < win; ++i) {
      const double dx = i - 5.0, dy = j - 5.0;
      w[j * win + i] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      wsum += w[j * win + i];
    }
  for (auto& v : w) v /= wsum;

  double total = 0.0;
  int count = 0;
  for (int y = 0; y + win <= a.height; ++y)
    for (int x = 0; x + win <= a.width; ++x) {
      double mu1 = 0, mu2 = 0, m11 = 0, m22 = 0, m12 = 0;
      for (int j = 0; j < win; ++j)
        for (int i = 0; i < win; ++i) {
          const double wa = a.at(x + i, y + j), wb = b.at(x + i, y + j);
          const double ww = w[j * win + i];
          mu1 += ww * wa;
          mu2 += ww * wb;
          m11 += ww * wa * wa;
          m22 += ww * wb * wb;
          m12 += ww * wa * wb;
        }
      const double s1 = m11 - mu1 * mu1, s2 = m22 - mu2 * mu2, s12 = m12 - mu1 * mu2;
      total += ((2 * mu1 * mu2 + c1) * (2 * s12 + c2)) /
               ((mu1 * mu1 + mu2 * mu2 + c1) * (s1 + s2 + c2));
      ++count;
    }
  return total / count;
}

} // namespace splatct::testing
