#pragma once

#include "splatct/common.hpp"
#include "splatct/voxelizer.hpp"

namespace splatct {

struct LossResult {
  double value = 0.0;
  Image grad; // dL / d(first argument)
};

/// Mean absolute error; subgradient 0 at exact ties.
LossResult l1_loss(const Image& rendered, const Image& measured);

// SSIM with the reference constants: 11x11 Gaussian window sigma 1.5,
// K1=0.01, K2=0.03, dynamic range 1. Windows are "valid" (no padding), so
// both dims must be >= 11.
double ssim(const Image& a, const Image& b);

/// D-SSIM = (1 - SSIM)/2 with gradient w.r.t. the rendered image.
LossResult dssim_loss(const Image& rendered, const Image& measured);

struct VolumeLossResult {
  double value = 0.0;
  DensityVolume grad;
};

/// Anisotropic 3D total variation: sum over axes of the mean absolute
/// forward difference along that axis.
VolumeLossResult tv3d_loss(const DensityVolume& subvolume);

double total_loss(double l1, double dssim, double tv, double lambda_ssim,
                  double lambda_tv);

/// PSNR over the full volume with vol clamped to [0,1]; capped at 100 dB
/// (returned for identical volumes). ref must already be in [0,1].
double psnr_3d(const DensityVolume& vol, const DensityVolume& ref);

/// Mean 2D SSIM over all axial, coronal, and sagittal slices.
double ssim_slices(const DensityVolume& vol, const DensityVolume& ref);

struct MetricsRecord {
  double psnr_db = 0.0;
  double ssim = 0.0;
};

MetricsRecord evaluate_volume(const DensityVolume& vol, const DensityVolume& ref);
std::string metrics_json_line(const MetricsRecord& m);

} // namespace splatct
