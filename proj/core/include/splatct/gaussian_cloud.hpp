#pragma once

#include "splatct/common.hpp"

namespace splatct {

// Activations mapping unconstrained raw parameters to the model domain.
// Density uses softplus (nonnegative, unbounded above); scales use
// s_min + exp(raw) so covariances stay safely positive definite.
double act_density(double raw);
double act_density_inv(double rho);        // throws InverseOutOfDomain for rho <= 0
double act_density_grad(double raw);       // d act / d raw
double act_scale(double raw, double s_min);
double act_scale_inv(double s, double s_min); // throws InverseOutOfDomain for s <= s_min
double act_scale_grad(double raw);

/// One kernel's activated parameters (convenience view for tests/tools).
struct RadiativeGaussian {
  double rho = 0.0; // central density, activated
  Vec3 position_mm = Vec3::Zero();
  Vec3 scale_mm = Vec3::Ones();
  Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0); // unit quaternion (w,x,y,z)
};

Mat3 rotation_matrix(const Vec4& q_raw); // normalizes q first
Mat3 covariance(const RadiativeGaussian& g);

/// Structure-of-arrays set of radiative Gaussian kernels. Raw
/// (pre-activation) parameters plus Adam moments and the accumulated
/// screen-space gradient statistics driving adaptive control.
class GaussianCloud {
 public:
  GaussianCloud() = default;
  explicit GaussianCloud(double s_min_mm) : s_min_mm_(s_min_mm) {}

  int size() const { return static_cast<int>(rho_raw.size()); }
  double s_min() const { return s_min_mm_; }
  void set_s_min(double s) { s_min_mm_ = s; }

  /// Appends a kernel given activated values; Adam state starts zeroed.
  void add_kernel(const RadiativeGaussian& g);
  void remove_kernels(const std::vector<char>& keep_mask);
  void normalize_rotations();
  void reset_grad_stats();

  RadiativeGaussian kernel(int i) const;
  double rho(int i) const { return act_density(rho_raw[i]); }
  Vec3 position(int i) const {
    return Vec3(pos[3 * i], pos[3 * i + 1], pos[3 * i + 2]);
  }
  Vec3 scale(int i) const {
    return Vec3(act_scale(scale_raw[3 * i], s_min_mm_),
                act_scale(scale_raw[3 * i + 1], s_min_mm_),
                act_scale(scale_raw[3 * i + 2], s_min_mm_));
  }
  Vec4 quat_raw(int i) const {
    return Vec4(rot[4 * i], rot[4 * i + 1], rot[4 * i + 2], rot[4 * i + 3]);
  }
  Mat3 rotation_at(int i) const { return rotation_matrix(quat_raw(i)); }
  Mat3 covariance_at(int i) const;

  // raw parameter arrays; lengths M, 3M, 3M, 4M
  std::vector<double> rho_raw;
  std::vector<double> pos;
  std::vector<double> scale_raw;
  std::vector<double> rot;

  // Adam first/second moments, laid out like the parameter arrays
  std::vector<double> adam_m_rho, adam_v_rho;
  std::vector<double> adam_m_pos, adam_v_pos;
  std::vector<double> adam_m_scale, adam_v_scale;
  std::vector<double> adam_m_rot, adam_v_rot;

  // adaptive-control statistics, accumulated by render_backward
  std::vector<double> grad2d_norm_accum; // sum of ||dL/dp_hat|| in half-image units
  std::vector<int> grad_count;
  std::vector<double> grad3d_accum; // 3M, summed dL/dposition

 private:
  double s_min_mm_ = 1e-4;
};

/// Parameter gradients with the same layout as the cloud's raw arrays.
struct CloudGrads {
  std::vector<double> rho_raw;
  std::vector<double> pos;
  std::vector<double> scale_raw;
  std::vector<double> rot;

  void resize(int m) {
    rho_raw.assign(m, 0.0);
    pos.assign(3 * static_cast<size_t>(m), 0.0);
    scale_raw.assign(3 * static_cast<size_t>(m), 0.0);
    rot.assign(4 * static_cast<size_t>(m), 0.0);
  }
};

/// Full Eq.-4 style density query, summing every kernel with no culling.
/// This is the reference the tiled voxelizer is checked against.
double density_at(const GaussianCloud& cloud, const Vec3& x_mm);

/// Chain rule from dL/dSigma (3x3, entrywise) through Sigma = R S S^T R^T
/// down to the raw scale and quaternion parameters of kernel i. Adds into
/// grads.
void accumulate_covariance_param_grads(const GaussianCloud& cloud, int i,
                                       const Mat3& dL_dSigma, CloudGrads& grads);

/// d(rotation matrix)/d(raw quaternion component k), including the
/// normalization chain.
std::array<Mat3, 4> rotation_matrix_jacobian(const Vec4& q_raw);

void save_cloud(const GaussianCloud& cloud, const std::string& path);
GaussianCloud load_cloud(const std::string& path);

} // namespace splatct
