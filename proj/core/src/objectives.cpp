#include "splatct/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace splatct {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01; // (K1 * L)^2, L = 1
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWin>& gauss_taps() {
  static const std::array<double, kWin> taps = [] {
    std::array<double, kWin> t{};
    double sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
      const double x = i - (kWin - 1) / 2.0;
      t[i] = std::exp(-x * x / (2.0 * kSigma * kSigma));
      sum += t[i];
    }
    for (auto& v : t) v /= sum;
    return t;
  }();
  return taps;
}

// valid-mode separable Gaussian window filter: (W,H) -> (W-10, H-10)
Image valid_filter(const Image& img) {
  const auto& w = gauss_taps();
  Image tmp(img.width - kWin + 1, img.height, 0.0);
  for (int y = 0; y < tmp.height; ++y)
    for (int x = 0; x < tmp.width; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWin; ++i) s += w[i] * img.at(x + i, y);
      tmp.at(x, y) = s;
    }
  Image out(img.width - kWin + 1, img.height - kWin + 1, 0.0);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      double s = 0.0;
      for (int j = 0; j < kWin; ++j) s += w[j] * tmp.at(x, y + j);
      out.at(x, y) = s;
    }
  return out;
}

// adjoint of valid_filter: spreads a valid-size field back to image size
Image adjoint_filter(const Image& field, int width, int height) {
  const auto& w = gauss_taps();
  Image tmp(field.width, height, 0.0);
  for (int y = 0; y < field.height; ++y)
    for (int x = 0; x < field.width; ++x) {
      const double v = field.at(x, y);
      if (v == 0.0) continue;
      for (int j = 0; j < kWin; ++j) tmp.at(x, y + j) += w[j] * v;
    }
  Image out(width, height, 0.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < tmp.width; ++x) {
      const double v = tmp.at(x, y);
      if (v == 0.0) continue;
      for (int i = 0; i < kWin; ++i) out.at(x + i, y) += w[i] * v;
    }
  return out;
}

Image elementwise_product(const Image& a, const Image& b) {
  Image out(a.width, a.height, 0.0);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

struct SsimFields {
  Image mu1, mu2, sigma1_sq, sigma2_sq, sigma12;
  double mean_ssim = 0.0;
};

SsimFields ssim_fields(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw DimMismatch("ssim: image dims differ");
  if (a.width < kWin || a.height < kWin)
    throw DimMismatch("ssim: image smaller than the 11x11 window");
  SsimFields f;
  f.mu1 = valid_filter(a);
  f.mu2 = valid_filter(b);
  const Image m11 = valid_filter(elementwise_product(a, a));
  const Image m22 = valid_filter(elementwise_product(b, b));
  const Image m12 = valid_filter(elementwise_product(a, b));
  f.sigma1_sq = Image(f.mu1.width, f.mu1.height, 0.0);
  f.sigma2_sq = Image(f.mu1.width, f.mu1.height, 0.0);
  f.sigma12 = Image(f.mu1.width, f.mu1.height, 0.0);
  double sum = 0.0;
  for (size_t i = 0; i < f.mu1.data.size(); ++i) {
    f.sigma1_sq.data[i] = m11.data[i] - f.mu1.data[i] * f.mu1.data[i];
    f.sigma2_sq.data[i] = m22.data[i] - f.mu2.data[i] * f.mu2.data[i];
    f.sigma12.data[i] = m12.data[i] - f.mu1.data[i] * f.mu2.data[i];
    const double a1 = 2.0 * f.mu1.data[i] * f.mu2.data[i] + kC1;
    const double b1 = f.mu1.data[i] * f.mu1.data[i] + f.mu2.data[i] * f.mu2.data[i] + kC1;
    const double a2 = 2.0 * f.sigma12.data[i] + kC2;
    const double b2 = f.sigma1_sq.data[i] + f.sigma2_sq.data[i] + kC2;
    sum += (a1 * a2) / (b1 * b2);
  }
  f.mean_ssim = sum / static_cast<double>(f.mu1.data.size());
  return f;
}

} // namespace

LossResult l1_loss(const Image& rendered, const Image& measured) {
  if (rendered.width != measured.width || rendered.height != measured.height)
    throw DimMismatch("l1_loss: image dims differ");
  LossResult r;
  r.grad = Image(rendered.width, rendered.height, 0.0);
  const double inv_n = 1.0 / static_cast<double>(rendered.data.size());
  double sum = 0.0;
  for (size_t i = 0; i < rendered.data.size(); ++i) {
    const double d = rendered.data[i] - measured.data[i];
    sum += std::abs(d);
    r.grad.data[i] = d > 0.0 ? inv_n : (d < 0.0 ? -inv_n : 0.0);
  }
  r.value = sum * inv_n;
  return r;
}

double ssim(const Image& a, const Image& b) { return ssim_fields(a, b).mean_ssim; }

LossResult dssim_loss(const Image& rendered, const Image& measured) {
  const SsimFields f = ssim_fields(rendered, measured);
  const int vw = f.mu1.width, vh = f.mu1.height;
  const double inv_p = 1.0 / static_cast<double>(f.mu1.data.size());

  // per-window partials of SSIM w.r.t. mu1, sigma1_sq, sigma12
  Image g1(vw, vh, 0.0), g2(vw, vh, 0.0), g3(vw, vh, 0.0);
  for (size_t i = 0; i < f.mu1.data.size(); ++i) {
    const double mu1 = f.mu1.data[i], mu2 = f.mu2.data[i];
    const double a1 = 2.0 * mu1 * mu2 + kC1;
    const double b1 = mu1 * mu1 + mu2 * mu2 + kC1;
    const double a2 = 2.0 * f.sigma12.data[i] + kC2;
    const double b2 = f.sigma1_sq.data[i] + f.sigma2_sq.data[i] + kC2;
    const double l = a1 / b1;
    const double cs = a2 / b2;
    g1.data[i] = cs * 2.0 * (mu2 * b1 - mu1 * a1) / (b1 * b1);
    g2.data[i] = -l * a2 / (b2 * b2);
    g3.data[i] = l * 2.0 / b2;
  }

  // dS/dx = G^T g1 + 2x (G^T g2) - 2 G^T(g2 mu1) + y (G^T g3) - G^T(g3 mu2)
  const Image t1 = adjoint_filter(g1, rendered.width, rendered.height);
  const Image t2 = adjoint_filter(g2, rendered.width, rendered.height);
  const Image t2m = adjoint_filter(elementwise_product(g2, f.mu1), rendered.width, rendered.height);
  const Image t3 = adjoint_filter(g3, rendered.width, rendered.height);
  const Image t3m = adjoint_filter(elementwise_product(g3, f.mu2), rendered.width, rendered.height);

  LossResult r;
  r.value = 0.5 * (1.0 - f.mean_ssim);
  r.grad = Image(rendered.width, rendered.height, 0.0);
  for (size_t i = 0; i < r.grad.data.size(); ++i) {
    const double ds = t1.data[i] + 2.0 * rendered.data[i] * t2.data[i] - 2.0 * t2m.data[i] +
                      measured.data[i] * t3.data[i] - t3m.data[i];
    r.grad.data[i] = -0.5 * inv_p * ds;
  }
  return r;
}

VolumeLossResult tv3d_loss(const DensityVolume& vol) {
  if (vol.dims.minCoeff() < 2)
    throw DimMismatch("tv3d_loss: need at least 2 voxels per axis");
  VolumeLossResult r;
  r.grad = DensityVolume(vol.grid());
  const int nx = vol.dims.x(), ny = vol.dims.y(), nz = vol.dims.z();
  const int strides[3] = {1, nx, nx * ny};
  const int counts[3] = {(nx - 1) * ny * nz, nx * (ny - 1) * nz, nx * ny * (nz - 1)};

  for (int axis = 0; axis < 3; ++axis) {
    if (counts[axis] == 0) continue;
    const double inv_n = 1.0 / static_cast<double>(counts[axis]);
    const int ex = axis == 0 ? nx - 1 : nx;
    const int ey = axis == 1 ? ny - 1 : ny;
    const int ez = axis == 2 ? nz - 1 : nz;
    double sum = 0.0;
    for (int z = 0; z < ez; ++z)
      for (int y = 0; y < ey; ++y)
        for (int x = 0; x < ex; ++x) {
          const size_t i = vol.index(x, y, z);
          const double d = vol.data[i + strides[axis]] - vol.data[i];
          sum += std::abs(d);
          if (d > 0.0) {
            r.grad.data[i + strides[axis]] += inv_n;
            r.grad.data[i] -= inv_n;
          } else if (d < 0.0) {
            r.grad.data[i + strides[axis]] -= inv_n;
            r.grad.data[i] += inv_n;
          }
        }
    r.value += sum * inv_n;
  }
  return r;
}

double total_loss(double l1, double dssim, double tv, double lambda_ssim,
                  double lambda_tv) {
  return l1 + lambda_ssim * dssim + lambda_tv * tv;
}

double psnr_3d(const DensityVolume& vol, const DensityVolume& ref) {
  if (vol.dims != ref.dims) throw DimMismatch("psnr_3d: volume dims differ");
  double mse = 0.0;
  for (size_t i = 0; i < vol.data.size(); ++i) {
    const double v = std::clamp(vol.data[i], 0.0, 1.0);
    const double d = v - ref.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(vol.data.size());
  if (mse <= 0.0) return 100.0;
  return std::min(10.0 * std::log10(1.0 / mse), 100.0);
}

namespace {

Image volume_slice(const DensityVolume& v, int axis, int index, bool clamp01) {
  int w, h;
  if (axis == 0) {
    w = v.dims.y();
    h = v.dims.z();
  } else if (axis == 1) {
    w = v.dims.x();
    h = v.dims.z();
  } else {
    w = v.dims.x();
    h = v.dims.y();
  }
  Image img(w, h, 0.0);
  for (int b = 0; b < h; ++b)
    for (int a = 0; a < w; ++a) {
      double val;
      if (axis == 0) val = v.at(index, a, b);
      else if (axis == 1) val = v.at(a, index, b);
      else val = v.at(a, b, index);
      img.at(a, b) = clamp01 ? std::clamp(val, 0.0, 1.0) : val;
    }
  return img;
}

} // namespace

double ssim_slices(const DensityVolume& vol, const DensityVolume& ref) {
  if (vol.dims != ref.dims) throw DimMismatch("ssim_slices: volume dims differ");
  double sum = 0.0;
  int count = 0;
  for (int axis = 0; axis < 3; ++axis)
    for (int i = 0; i < vol.dims[axis]; ++i) {
      sum += ssim(volume_slice(vol, axis, i, true), volume_slice(ref, axis, i, true));
      ++count;
    }
  return sum / count;
}

MetricsRecord evaluate_volume(const DensityVolume& vol, const DensityVolume& ref) {
  MetricsRecord m;
  m.psnr_db = psnr_3d(vol, ref);
  m.ssim = ssim_slices(vol, ref);
  return m;
}

std::string metrics_json_line(const MetricsRecord& m) {
  std::ostringstream os;
  os.precision(17);
  os << "{\"psnr_db\": " << m.psnr_db << ", \"ssim\": " << m.ssim << "}";
  return os.str();
}

} // namespace splatct
