#include "splatct/gaussian_cloud.hpp"

#include <cmath>

#include "splatct/io.hpp"

namespace splatct {

double act_density(double raw) {
  // softplus, linear for large inputs
  if (raw > 30.0) return raw;
  return std::log1p(std::exp(raw));
}

double act_density_inv(double rho) {
  if (!(rho > 0.0))
    throw InverseOutOfDomain("density inverse activation needs rho > 0");
  if (rho > 30.0) return rho;
  return rho + std::log1p(-std::exp(-rho));
}

double act_density_grad(double raw) {
  return 1.0 / (1.0 + std::exp(-raw));
}

double act_scale(double raw, double s_min) {
  return s_min + std::exp(raw);
}

double act_scale_inv(double s, double s_min) {
  if (!(s > s_min))
    throw InverseOutOfDomain("scale inverse activation needs s > s_min");
  return std::log(s - s_min);
}

double act_scale_grad(double raw) { return std::exp(raw); }

Mat3 rotation_matrix(const Vec4& q_raw) {
  const Vec4 q = q_raw.normalized();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Mat3 covariance(const RadiativeGaussian& g) {
  const Mat3 r = rotation_matrix(g.rotation);
  const Vec3 s2 = g.scale_mm.cwiseProduct(g.scale_mm);
  return r * s2.asDiagonal() * r.transpose();
}

void GaussianCloud::add_kernel(const RadiativeGaussian& g) {
  rho_raw.push_back(act_density_inv(g.rho));
  for (int k = 0; k < 3; ++k) pos.push_back(g.position_mm[k]);
  for (int k = 0; k < 3; ++k)
    scale_raw.push_back(act_scale_inv(g.scale_mm[k], s_min_mm_));
  const Vec4 q = g.rotation.normalized();
  for (int k = 0; k < 4; ++k) rot.push_back(q[k]);

  adam_m_rho.push_back(0.0);
  adam_v_rho.push_back(0.0);
  for (int k = 0; k < 3; ++k) {
    adam_m_pos.push_back(0.0);
    adam_v_pos.push_back(0.0);
    adam_m_scale.push_back(0.0);
    adam_v_scale.push_back(0.0);
  }
  for (int k = 0; k < 4; ++k) {
    adam_m_rot.push_back(0.0);
    adam_v_rot.push_back(0.0);
  }
  grad2d_norm_accum.push_back(0.0);
  grad_count.push_back(0);
  for (int k = 0; k < 3; ++k) grad3d_accum.push_back(0.0);
}

namespace {

template <typename T>
void compact(std::vector<T>& v, const std::vector<char>& keep, int stride) {
  size_t w = 0;
  for (size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) continue;
    for (int k = 0; k < stride; ++k) v[w * stride + k] = v[i * stride + k];
    ++w;
  }
  v.resize(w * stride);
}

} // namespace

void GaussianCloud::remove_kernels(const std::vector<char>& keep) {
  compact(rho_raw, keep, 1);
  compact(pos, keep, 3);
  compact(scale_raw, keep, 3);
  compact(rot, keep, 4);
  compact(adam_m_rho, keep, 1);
  compact(adam_v_rho, keep, 1);
  compact(adam_m_pos, keep, 3);
  compact(adam_v_pos, keep, 3);
  compact(adam_m_scale, keep, 3);
  compact(adam_v_scale, keep, 3);
  compact(adam_m_rot, keep, 4);
  compact(adam_v_rot, keep, 4);
  compact(grad2d_norm_accum, keep, 1);
  compact(grad_count, keep, 1);
  compact(grad3d_accum, keep, 3);
}

void GaussianCloud::normalize_rotations() {
  for (int i = 0; i < size(); ++i) {
    const Vec4 q = quat_raw(i).normalized();
    for (int k = 0; k < 4; ++k) rot[4 * i + k] = q[k];
  }
}

void GaussianCloud::reset_grad_stats() {
  std::fill(grad2d_norm_accum.begin(), grad2d_norm_accum.end(), 0.0);
  std::fill(grad_count.begin(), grad_count.end(), 0);
  std::fill(grad3d_accum.begin(), grad3d_accum.end(), 0.0);
}

RadiativeGaussian GaussianCloud::kernel(int i) const {
  RadiativeGaussian g;
  g.rho = rho(i);
  g.position_mm = position(i);
  g.scale_mm = scale(i);
  g.rotation = quat_raw(i).normalized();
  return g;
}

Mat3 GaussianCloud::covariance_at(int i) const {
  const Mat3 r = rotation_at(i);
  const Vec3 s = scale(i);
  return r * s.cwiseProduct(s).asDiagonal() * r.transpose();
}

double density_at(const GaussianCloud& cloud, const Vec3& x) {
  double sum = 0.0;
  for (int i = 0; i < cloud.size(); ++i) {
    const Vec3 d = x - cloud.position(i);
    const Mat3 sigma = cloud.covariance_at(i);
    const double e = d.dot(sigma.inverse() * d);
    sum += cloud.rho(i) * std::exp(-0.5 * e);
  }
  return sum;
}

std::array<Mat3, 4> rotation_matrix_jacobian(const Vec4& q_raw) {
  const double nrm = q_raw.norm();
  const Vec4 q = q_raw / nrm;
  const double w = q[0], x = q[1], y = q[2], z = q[3];

  std::array<Mat3, 4> dn; // dR/d(normalized q)
  dn[0] << 0, -z, y,
           z, 0, -x,
           -y, x, 0;
  dn[1] << 0, y, z,
           y, -2 * x, -w,
           z, w, -2 * x;
  dn[2] << -2 * y, x, w,
           x, 0, z,
           -w, z, -2 * y;
  dn[3] << -2 * z, -w, x,
           w, -2 * z, y,
           x, y, 0;
  for (auto& m : dn) m *= 2.0;

  // chain through normalization: d qn_l / d q_k = (delta_lk - qn_l qn_k)/|q|
  std::array<Mat3, 4> out;
  for (int k = 0; k < 4; ++k) {
    Mat3 m = Mat3::Zero();
    for (int l = 0; l < 4; ++l) {
      const double coeff = ((l == k ? 1.0 : 0.0) - q[l] * q[k]) / nrm;
      m += coeff * dn[l];
    }
    out[k] = m;
  }
  return out;
}

void accumulate_covariance_param_grads(const GaussianCloud& cloud, int i,
                                       const Mat3& g_sigma, CloudGrads& grads) {
  const Mat3 r = cloud.rotation_at(i);
  const Vec3 s = cloud.scale(i);
  const Mat3 d = s.cwiseProduct(s).asDiagonal();

  // Sigma = R D R^T with D = diag(s^2)
  const Mat3 g_r = (g_sigma + g_sigma.transpose()) * r * d;
  const Mat3 g_d = r.transpose() * g_sigma * r;

  for (int k = 0; k < 3; ++k) {
    const double dL_ds = g_d(k, k) * 2.0 * s[k];
    grads.scale_raw[3 * i + k] += dL_ds * act_scale_grad(cloud.scale_raw[3 * i + k]);
  }

  const auto dr = rotation_matrix_jacobian(cloud.quat_raw(i));
  for (int k = 0; k < 4; ++k)
    grads.rot[4 * i + k] += (g_r.array() * dr[k].array()).sum();
}

} // namespace splatct
