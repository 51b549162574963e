#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace splatct {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Vec2i = Eigen::Vector2i;
using Vec3i = Eigen::Vector3i;

// chi-square quantiles at 99% confidence; dof 2 is -2 ln(0.01)
inline constexpr double kChi2Q99Dof2 = 9.210340371976184;
inline constexpr double kChi2Q99Dof3 = 11.344866730144373;

inline constexpr int kImageTilePx = 16;  // 2D rasterizer tile edge
inline constexpr int kVolumeTileVox = 8; // 3D voxelizer tile edge

// Config-file problems (bad schema, invalid values). CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input-data problems (missing/corrupt files, dims). CLI exit code 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FileFormatError : DataError {
  using DataError::DataError;
};

struct DimMismatch : DataError {
  using DataError::DataError;
};

struct InsufficientViews : DataError {
  using DataError::DataError;
};

struct TooFewOccupiedVoxels : DataError {
  using DataError::DataError;
};

// Non-finite loss during optimization. CLI exit code 4.
struct DivergenceDetected : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct KernelBehindSource : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InverseOutOfDomain : std::domain_error {
  using std::domain_error::domain_error;
};

// Row-major scalar image, pixel (u,v) at data[v*width + u].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

  double& at(int u, int v) { return data[static_cast<size_t>(v) * width + u]; }
  double at(int u, int v) const { return data[static_cast<size_t>(v) * width + u]; }
  size_t size() const { return data.size(); }
};

void set_num_threads(int n); // 0 = hardware default
int num_threads();

} // namespace splatct
