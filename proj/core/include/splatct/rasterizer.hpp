#pragma once

#include <optional>

#include "splatct/gaussian_cloud.hpp"
#include "splatct/geometry.hpp"

namespace splatct {

enum class RenderMode {
  kRectified, // scale projected amplitude by mu = sqrt(2pi |Sigma~| / |Sigma^|)
  kBiased,    // keep the 3D amplitude unchanged (legacy splatting behavior)
};

struct RasterOptions {
  RenderMode mode = RenderMode::kRectified;
  double lowpass_eps_px = 0.3;       // added in quadrature to the 2D covariance
  bool dilation_compensation = true; // rescale amplitude to preserve 2D mass
  bool freeze_jacobian = false;      // drop the dJ/dp term in the backward pass
  double cull_mahalanobis = 3.0348542587702925; // sqrt(kChi2Q99Dof2)
};

/// A kernel after projection to one view's image plane.
struct ProjectedGaussian2D {
  Vec2 center_px = Vec2::Zero();
  Mat2 cov_px = Mat2::Identity();   // low-pass dilated
  Mat2 conic_px = Mat2::Identity(); // cov_px inverse
  double amplitude = 0.0;           // final 2D central value
  double mu = 0.0;                  // integration factor of this view
  double depth_mm = 0.0;            // ray-space distance of the center
  int kernel_index = -1;
};

/// Projects one kernel into a view. Returns nullopt when culled (center
/// behind the near clip, or the 99% ellipse entirely off the detector).
std::optional<ProjectedGaussian2D> project_kernel(
    const GaussianCloud& cloud, int kernel_index, const ViewTransform& view,
    const DetectorModel& det, const RasterOptions& opts = {});

/// Log-domain projection plus the forward state the backward pass reuses.
struct RenderedProjection {
  Image image;
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<ProjectedGaussian2D> visible;
  std::vector<std::vector<int>> tile_visible; // indices into visible, per tile

  int tile_of_pixel(int u, int v) const {
    return (v / kImageTilePx) * tiles_x + (u / kImageTilePx);
  }
};

RenderedProjection render(const GaussianCloud& cloud, const ScannerConfig& config,
                          double theta_rad, const RasterOptions& opts = {});

/// Exact analytic gradients of render() w.r.t. all raw kernel parameters,
/// including the chains through mu, the low-pass compensation, the
/// ray-space covariance and the Jacobian's dependence on position. Adds
/// into grads; when accumulate_stats is set, also updates the cloud's
/// adaptive-control statistics.
void render_backward(GaussianCloud& cloud, const ScannerConfig& config,
                     double theta_rad, const RenderedProjection& fwd,
                     const Image& dL_dimage, CloudGrads& grads,
                     const RasterOptions& opts = {}, bool accumulate_stats = false);

} // namespace splatct
