#include "splatct/rasterizer.hpp"

#include <algorithm>
#include <cmath>

namespace splatct {

namespace {

struct ProjectionChain {
  // forward intermediates needed for the parameter chain rule
  Vec3 p_scanner;
  Mat3 jac;        // J at p_scanner
  Mat3 a;          // J * W
  Mat3 sigma_ray;  // A Sigma A^T
  Mat2 sigma2_raw; // top-left block before low-pass
  Mat2 sigma2;     // dilated
  double mu = 1.0;
  double comp = 1.0; // dilation compensation factor
  double rho = 0.0;  // activated density
  double amp_pre = 0.0; // amplitude before low-pass compensation
};

bool project_impl(const GaussianCloud& cloud, int i, const ViewTransform& view,
                  const DetectorModel& det, const RasterOptions& opts,
                  ProjectedGaussian2D& out, ProjectionChain* chain) {
  const Vec3 p_s = view.world_to_scanner(cloud.position(i));
  if (p_s.z() < det.near_clip_mm) return false;

  const Mat3 jac = local_jacobian(det, p_s);
  const Mat3 a = jac * view.rot;
  const Mat3 sigma = cloud.covariance_at(i);
  const Mat3 sigma_ray = a * sigma * a.transpose();
  const Mat2 sigma2_raw = sigma_ray.topLeftCorner<2, 2>();

  const double det3 = sigma_ray.determinant();
  const double det2_raw = sigma2_raw.determinant();
  const double rho = cloud.rho(i);

  const double mu = std::sqrt(2.0 * M_PI * det3 / det2_raw);
  double amp = (opts.mode == RenderMode::kRectified) ? mu * rho : rho;
  const double amp_pre = amp;

  const double eps2 = opts.lowpass_eps_px * opts.lowpass_eps_px;
  const Mat2 sigma2 = sigma2_raw + eps2 * Mat2::Identity();
  double comp = 1.0;
  if (opts.dilation_compensation) {
    comp = std::sqrt(det2_raw / sigma2.determinant());
    amp *= comp;
  }

  const Vec3 ray_pt = ray_space_point(det, p_s);
  const Vec2 center(ray_pt.x(), ray_pt.y());

  // cull when the 99% ellipse cannot touch the detector
  const double rx = opts.cull_mahalanobis * std::sqrt(sigma2(0, 0));
  const double ry = opts.cull_mahalanobis * std::sqrt(sigma2(1, 1));
  if (center.x() + rx < 0.0 || center.x() - rx > det.width_px ||
      center.y() + ry < 0.0 || center.y() - ry > det.height_px)
    return false;

  out.center_px = center;
  out.cov_px = sigma2;
  out.conic_px = sigma2.inverse();
  out.amplitude = amp;
  out.mu = mu;
  out.depth_mm = ray_pt.z();
  out.kernel_index = i;

  if (chain) {
    chain->p_scanner = p_s;
    chain->jac = jac;
    chain->a = a;
    chain->sigma_ray = sigma_ray;
    chain->sigma2_raw = sigma2_raw;
    chain->sigma2 = sigma2;
    chain->mu = mu;
    chain->comp = comp;
    chain->rho = rho;
    chain->amp_pre = amp_pre;
  }
  return true;
}

struct TileRange {
  int tx0, tx1, ty0, ty1; // inclusive
};

TileRange tile_range(const ProjectedGaussian2D& g, const RasterOptions& opts,
                     int tiles_x, int tiles_y) {
  const double rx = opts.cull_mahalanobis * std::sqrt(g.cov_px(0, 0));
  const double ry = opts.cull_mahalanobis * std::sqrt(g.cov_px(1, 1));
  TileRange r;
  r.tx0 = std::max(0, static_cast<int>(std::floor((g.center_px.x() - rx) / kImageTilePx)));
  r.tx1 = std::min(tiles_x - 1, static_cast<int>(std::floor((g.center_px.x() + rx) / kImageTilePx)));
  r.ty0 = std::max(0, static_cast<int>(std::floor((g.center_px.y() - ry) / kImageTilePx)));
  r.ty1 = std::min(tiles_y - 1, static_cast<int>(std::floor((g.center_px.y() + ry) / kImageTilePx)));
  return r;
}

} // namespace

std::optional<ProjectedGaussian2D> project_kernel(const GaussianCloud& cloud, int i,
                                                  const ViewTransform& view,
                                                  const DetectorModel& det,
                                                  const RasterOptions& opts) {
  ProjectedGaussian2D out;
  if (!project_impl(cloud, i, view, det, opts, out, nullptr)) return std::nullopt;
  return out;
}

RenderedProjection render(const GaussianCloud& cloud, const ScannerConfig& config,
                          double theta_rad, const RasterOptions& opts) {
  const ViewTransform view = view_transform(config, theta_rad);
  const DetectorModel det = detector_model(config);

  RenderedProjection out;
  out.image = Image(det.width_px, det.height_px, 0.0);
  out.tiles_x = (det.width_px + kImageTilePx - 1) / kImageTilePx;
  out.tiles_y = (det.height_px + kImageTilePx - 1) / kImageTilePx;
  out.tile_visible.resize(static_cast<size_t>(out.tiles_x) * out.tiles_y);

  out.visible.reserve(cloud.size());
  for (int i = 0; i < cloud.size(); ++i) {
    ProjectedGaussian2D g;
    if (!project_impl(cloud, i, view, det, opts, g, nullptr)) continue;
    const int vi = static_cast<int>(out.visible.size());
    out.visible.push_back(g);
    const TileRange r = tile_range(g, opts, out.tiles_x, out.tiles_y);
    for (int ty = r.ty0; ty <= r.ty1; ++ty)
      for (int tx = r.tx0; tx <= r.tx1; ++tx)
        out.tile_visible[static_cast<size_t>(ty) * out.tiles_x + tx].push_back(vi);
  }

  const int n_tiles = static_cast<int>(out.tile_visible.size());
#pragma omp parallel for schedule(static)
  for (int t = 0; t < n_tiles; ++t) {
    const auto& list = out.tile_visible[t];
    if (list.empty()) continue;
    const int tx = t % out.tiles_x;
    const int ty = t / out.tiles_x;
    const int u0 = tx * kImageTilePx, u1 = std::min(u0 + kImageTilePx, det.width_px);
    const int v0 = ty * kImageTilePx, v1 = std::min(v0 + kImageTilePx, det.height_px);
    for (int v = v0; v < v1; ++v)
      for (int u = u0; u < u1; ++u) {
        const Vec2 x(u + 0.5, v + 0.5);
        double sum = 0.0;
        for (int vi : list) {
          const ProjectedGaussian2D& g = out.visible[vi];
          const Vec2 d = x - g.center_px;
          sum += g.amplitude * std::exp(-0.5 * d.dot(g.conic_px * d));
        }
        out.image.at(u, v) = sum;
      }
  }
  return out;
}

namespace {

// dJ/d(p_scanner component c), matching local_jacobian
Mat3 jacobian_derivative(const DetectorModel& det, const Vec3& p, int c) {
  const double x = p.x(), y = p.y(), z = p.z();
  const double n = p.norm();
  const double n3 = n * n * n;
  Mat3 d = Mat3::Zero();
  switch (c) {
    case 0:
      d(0, 2) = -det.fx_px / (z * z);
      d(2, 0) = 1.0 / n - x * x / n3;
      d(2, 1) = -x * y / n3;
      d(2, 2) = -x * z / n3;
      break;
    case 1:
      d(1, 2) = -det.fy_px / (z * z);
      d(2, 0) = -x * y / n3;
      d(2, 1) = 1.0 / n - y * y / n3;
      d(2, 2) = -y * z / n3;
      break;
    default:
      d(0, 0) = -det.fx_px / (z * z);
      d(0, 2) = 2.0 * det.fx_px * x / (z * z * z);
      d(1, 1) = -det.fy_px / (z * z);
      d(1, 2) = 2.0 * det.fy_px * y / (z * z * z);
      d(2, 0) = -x * z / n3;
      d(2, 1) = -y * z / n3;
      d(2, 2) = 1.0 / n - z * z / n3;
      break;
  }
  return d;
}

} // namespace

void render_backward(GaussianCloud& cloud, const ScannerConfig& config,
                     double theta_rad, const RenderedProjection& fwd,
                     const Image& dL_dimage, CloudGrads& grads,
                     const RasterOptions& opts, bool accumulate_stats) {
  const ViewTransform view = view_transform(config, theta_rad);
  const DetectorModel det = detector_model(config);
  if (dL_dimage.width != det.width_px || dL_dimage.height != det.height_px)
    throw DimMismatch("render_backward: upstream gradient dims mismatch");

  const int n_tiles = static_cast<int>(fwd.tile_visible.size());
  const int n_vis = static_cast<int>(fwd.visible.size());

  // per-(tile,kernel) sufficient statistics of the pixel sums:
  //   s0 = sum g*E, s1 = sum g*E*d (2), s2 = sum g*E*d d^T (sym, 3)
  struct Stat {
    double s0 = 0.0;
    double s1[2] = {0.0, 0.0};
    double s2[3] = {0.0, 0.0, 0.0}; // xx yy xy
  };
  std::vector<std::vector<Stat>> scratch(n_tiles);

#pragma omp parallel for schedule(static)
  for (int t = 0; t < n_tiles; ++t) {
    const auto& list = fwd.tile_visible[t];
    if (list.empty()) continue;
    scratch[t].resize(list.size());
    const int tx = t % fwd.tiles_x;
    const int ty = t / fwd.tiles_x;
    const int u0 = tx * kImageTilePx, u1 = std::min(u0 + kImageTilePx, det.width_px);
    const int v0 = ty * kImageTilePx, v1 = std::min(v0 + kImageTilePx, det.height_px);
    for (int v = v0; v < v1; ++v)
      for (int u = u0; u < u1; ++u) {
        const double g = dL_dimage.at(u, v);
        if (g == 0.0) continue;
        const Vec2 x(u + 0.5, v + 0.5);
        for (size_t li = 0; li < list.size(); ++li) {
          const ProjectedGaussian2D& pg = fwd.visible[list[li]];
          const Vec2 d = x - pg.center_px;
          const double ge = g * std::exp(-0.5 * d.dot(pg.conic_px * d));
          Stat& s = scratch[t][li];
          s.s0 += ge;
          s.s1[0] += ge * d.x();
          s.s1[1] += ge * d.y();
          s.s2[0] += ge * d.x() * d.x();
          s.s2[1] += ge * d.y() * d.y();
          s.s2[2] += ge * d.x() * d.y();
        }
      }
  }

  // fixed-order reduction
  std::vector<Stat> total(n_vis);
  for (int t = 0; t < n_tiles; ++t) {
    const auto& list = fwd.tile_visible[t];
    for (size_t li = 0; li < list.size(); ++li) {
      const Stat& s = scratch[t][li];
      Stat& acc = total[list[li]];
      acc.s0 += s.s0;
      acc.s1[0] += s.s1[0];
      acc.s1[1] += s.s1[1];
      for (int k = 0; k < 3; ++k) acc.s2[k] += s.s2[k];
    }
  }

  const double eps2 = opts.lowpass_eps_px * opts.lowpass_eps_px;
  (void)eps2;

  for (int vi = 0; vi < n_vis; ++vi) {
    const int i = fwd.visible[vi].kernel_index;

    // rebuild the projection chain at full precision
    ProjectedGaussian2D pg;
    ProjectionChain ch;
    if (!project_impl(cloud, i, view, det, opts, pg, &ch)) continue;

    const Stat& s = total[vi];
    const Mat2 q = pg.conic_px;
    const Vec2 s1(s.s1[0], s.s1[1]);
    Mat2 s2;
    s2 << s.s2[0], s.s2[2],
          s.s2[2], s.s2[1];

    // pixel value: amp * exp(-1/2 d^T Q d), d = x - p_hat
    const double g_amp = s.s0;
    const Vec2 g_center = pg.amplitude * (q * s1);
    const Mat2 g_q = -0.5 * pg.amplitude * s2;
    Mat2 g_sigma2 = -q * g_q * q; // through the 2x2 inverse

    // low-pass: sigma2 = sigma2_raw + eps^2 I, amp = amp_pre * comp
    double g_amp_pre = g_amp;
    Mat2 g_sigma2_raw = Mat2::Zero();
    if (opts.dilation_compensation) {
      g_amp_pre = g_amp * ch.comp;
      const double g_comp = g_amp * ch.amp_pre;
      const Mat2 inv_raw = ch.sigma2_raw.inverse();
      g_sigma2_raw += g_comp * 0.5 * ch.comp * inv_raw;
      g_sigma2 += g_comp * (-0.5) * ch.comp * q;
    }
    g_sigma2_raw += g_sigma2;

    // amplitude chain: rectified amp_pre = mu * rho, biased amp_pre = rho
    Mat3 g_sigma_ray = Mat3::Zero();
    double g_rho = 0.0;
    if (opts.mode == RenderMode::kRectified) {
      g_rho = g_amp_pre * ch.mu;
      const double g_mu = g_amp_pre * ch.rho;
      g_sigma_ray += g_mu * 0.5 * ch.mu * ch.sigma_ray.inverse();
      g_sigma2_raw += g_mu * (-0.5) * ch.mu * ch.sigma2_raw.inverse();
    } else {
      g_rho = g_amp_pre;
    }
    g_sigma_ray.topLeftCorner<2, 2>() += g_sigma2_raw;

    // sigma_ray = A Sigma A^T
    const Mat3 sigma = cloud.covariance_at(i);
    const Mat3 g_a = (g_sigma_ray + g_sigma_ray.transpose()) * ch.a * sigma;
    const Mat3 g_sigma = ch.a.transpose() * g_sigma_ray * ch.a;

    // center chain: p_hat = first two rows of the ray-space map
    Vec3 g_pscan = Vec3::Zero();
    {
      const double zc = ch.p_scanner.z();
      Eigen::Matrix<double, 2, 3> dphi;
      dphi << det.fx_px / zc, 0.0, -det.fx_px * ch.p_scanner.x() / (zc * zc),
              0.0, det.fy_px / zc, -det.fy_px * ch.p_scanner.y() / (zc * zc);
      g_pscan += dphi.transpose() * g_center;
    }
    if (!opts.freeze_jacobian) {
      const Mat3 g_jac = g_a * view.rot.transpose();
      for (int c = 0; c < 3; ++c)
        g_pscan[c] += (g_jac.array() * jacobian_derivative(det, ch.p_scanner, c).array()).sum();
    }
    const Vec3 g_pos = view.rot.transpose() * g_pscan;

    grads.rho_raw[i] += g_rho * act_density_grad(cloud.rho_raw[i]);
    for (int c = 0; c < 3; ++c) grads.pos[3 * i + c] += g_pos[c];
    accumulate_covariance_param_grads(cloud, i, g_sigma, grads);

    if (accumulate_stats) {
      // screen-space gradient in half-image units, as in reference splatting
      const Vec2 ndc_grad(g_center.x() * 0.5 * det.width_px,
                          g_center.y() * 0.5 * det.height_px);
      cloud.grad2d_norm_accum[i] += ndc_grad.norm();
      cloud.grad_count[i] += 1;
      for (int c = 0; c < 3; ++c) cloud.grad3d_accum[3 * i + c] += g_pos[c];
    }
  }
}

} // namespace splatct
