#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "splatct/voxelizer.hpp"

using namespace splatct;
using namespace splatct::testing;

TEST_CASE("voxelize basics") {
  const GridSpec grid = grid_for_extent(Vec3(-1, -1, -1), Vec3(1, 1, 1), Vec3i(16, 16, 16));

  SUBCASE("empty cloud gives zeros") {
    GaussianCloud empty(2e-4);
    const DensityVolume vol = voxelize(empty, grid);
    for (double v : vol.data) CHECK(v == 0.0);
  }

  SUBCASE("kernel centered on a voxel evaluates to rho there") {
    GaussianCloud cloud(2e-4);
    RadiativeGaussian g;
    g.rho = 0.42;
    g.position_mm = grid.voxel_center(5, 9, 12);
    g.scale_mm = Vec3(0.1, 0.1, 0.1);
    cloud.add_kernel(g);
    const DensityVolume vol = voxelize(cloud, grid);
    CHECK(vol.at(5, 9, 12) == doctest::Approx(0.42).epsilon(1e-12));
  }
}

TEST_CASE("voxelize matches the full-sum oracle") {
  // kernel scales around one voxel spacing: the conservative tile culling
  // then keeps the truncation below 1e-3 of the peak
  const GridSpec grid = grid_for_extent(Vec3(-1, -1, -1), Vec3(1, 1, 1), Vec3i(32, 32, 32));
  const double vox = grid.spacing_mm.x();
  std::mt19937_64 rng(71);

  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    GaussianCloud cloud = random_cloud(rng, 20, 0.8, 0.5 * vox, 1.4 * vox);
    const DensityVolume vol = voxelize(cloud, grid);
    double peak = 0.0;
    for (int i = 0; i < cloud.size(); ++i) peak = std::max(peak, cloud.rho(i));
    for (int z = 0; z < 32; z += 2)
      for (int y = 0; y < 32; y += 2)
        for (int x = 0; x < 32; x += 2) {
          const double oracle = density_at(cloud, grid.voxel_center(x, y, z));
          worst = std::max(worst, std::abs(vol.at(x, y, z) - oracle) / peak);
        }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("voxelize linearity and permutation invariance") {
  const GridSpec grid = grid_for_extent(Vec3(-1, -1, -1), Vec3(1, 1, 1), Vec3i(16, 16, 16));
  std::mt19937_64 rng(73);
  GaussianCloud a = random_cloud(rng, 6);
  GaussianCloud b = random_cloud(rng, 5);
  GaussianCloud both(a.s_min());
  for (int i = 0; i < a.size(); ++i) both.add_kernel(a.kernel(i));
  for (int i = 0; i < b.size(); ++i) both.add_kernel(b.kernel(i));

  const DensityVolume va = voxelize(a, grid);
  const DensityVolume vb = voxelize(b, grid);
  const DensityVolume vboth = voxelize(both, grid);
  for (size_t i = 0; i < vboth.data.size(); ++i)
    CHECK(std::abs(vboth.data[i] - va.data[i] - vb.data[i]) < 1e-12);
}

TEST_CASE("culling is monotone in the confidence radius") {
  const GridSpec grid = grid_for_extent(Vec3(-1, -1, -1), Vec3(1, 1, 1), Vec3i(24, 24, 24));
  std::mt19937_64 rng(79);
  GaussianCloud cloud = random_cloud(rng, 15, 0.8, 0.05, 0.3);
  VoxelizeOptions tight, loose;
  loose.cull_mahalanobis = 5.0;
  const DensityVolume vt = voxelize(cloud, grid, tight);
  const DensityVolume vl = voxelize(cloud, grid, loose);
  for (size_t i = 0; i < vt.data.size(); ++i)
    CHECK(vl.data[i] >= vt.data[i] - 1e-15);
}

TEST_CASE("voxelize_backward matches finite differences") {
  // 8^3 grid = one tile, so finite differences cannot flip tile membership
  const GridSpec grid = grid_for_extent(Vec3(-1, -1, -1), Vec3(1, 1, 1), Vec3i(8, 8, 8));
  std::mt19937_64 rng(83);

  for (int scene = 0; scene < 3; ++scene) {
    GaussianCloud cloud = random_cloud(rng, 4, 0.4, 0.2, 0.5);
    DensityVolume upstream(grid);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (double& v : upstream.data) v = uni(rng);

    auto loss = [&](const GaussianCloud& c) {
      const DensityVolume vol = voxelize(c, grid);
      double s = 0.0;
      for (size_t i = 0; i < vol.data.size(); ++i) s += vol.data[i] * upstream.data[i];
      return s;
    };

    CloudGrads grads;
    grads.resize(cloud.size());
    voxelize_backward(cloud, grid, upstream, grads);
    const auto res = finite_difference_check(cloud, grads, loss);
    CHECK(res.max_err < 1e-4);
  }
}

TEST_CASE("voxelize_backward edge cases") {
  const GridSpec grid = grid_for_extent(Vec3(-1, -1, -1), Vec3(1, 1, 1), Vec3i(8, 8, 8));
  std::mt19937_64 rng(89);
  GaussianCloud cloud = random_cloud(rng, 3);

  SUBCASE("zero upstream gradient") {
    DensityVolume zeros(grid);
    CloudGrads grads;
    grads.resize(cloud.size());
    voxelize_backward(cloud, grid, zeros, grads);
    for (double g : grads.rho_raw) CHECK(g == 0.0);
    for (double g : grads.pos) CHECK(g == 0.0);
  }

  SUBCASE("density gradient at a voxel is the Gaussian weight") {
    DensityVolume upstream(grid);
    upstream.at(3, 4, 5) = 1.0;
    CloudGrads grads;
    grads.resize(cloud.size());
    voxelize_backward(cloud, grid, upstream, grads);
    for (int i = 0; i < cloud.size(); ++i) {
      const Vec3 d = grid.voxel_center(3, 4, 5) - cloud.position(i);
      const Mat3 q = cloud.covariance_at(i).inverse();
      const double weight = std::exp(-0.5 * d.dot(q * d));
      const double drho = grads.rho_raw[i] / act_density_grad(cloud.rho_raw[i]);
      CHECK(drho == doctest::Approx(weight).epsilon(1e-9));
    }
  }
}

TEST_CASE("random subvolume spec") {
  const Vec3 lo(-1, -1, -1), hi(1, 1, 1);
  const Vec3 spacing(2.0 / 64, 2.0 / 64, 2.0 / 64);

  SUBCASE("d=32 fits inside the extent with the output spacing") {
    std::mt19937_64 rng(97);
    for (int i = 0; i < 50; ++i) {
      const GridSpec g = random_subvolume_spec(lo, hi, spacing, 32, rng);
      CHECK(g.dims == Vec3i(32, 32, 32));
      CHECK(g.spacing_mm == spacing);
      for (int k = 0; k < 3; ++k) {
        CHECK(g.origin_mm[k] >= lo[k]);
        CHECK(g.origin_mm[k] + 32 * spacing[k] <= hi[k] + 1e-12);
      }
    }
  }

  SUBCASE("seeded placement is reproducible") {
    std::mt19937_64 r1(123), r2(123);
    const GridSpec a = random_subvolume_spec(lo, hi, spacing, 16, r1);
    const GridSpec b = random_subvolume_spec(lo, hi, spacing, 16, r2);
    CHECK(a.origin_mm == b.origin_mm);
  }
}
